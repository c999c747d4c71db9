from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace


class Codec(str, enum.Enum):
    HEVC = "hevc"
    VP9 = "vp9"
    H264 = "h264"
    SYNTH = "synth"


class Preset(str, enum.Enum):
    DEFAULT = "default"
    FAST = "fast"


CRF_RANGE = {
    Codec.HEVC: (0, 51),
    Codec.H264: (0, 51),
    Codec.VP9: (0, 63),
    Codec.SYNTH: (0, 63),
}

FRAME_TYPES = ("I", "P", "B")

#: Rounding applied to k before it becomes part of a job identity.
K_DECIMALS = 3

STANDARD_FRAMES = 150


@dataclass(frozen=True)
class ClipRef:
    """A clip on disk (or, for the simulator, a ``synth:`` URI)."""

    clip_id: str
    path: str
    width: int
    height: int
    frames: int = STANDARD_FRAMES
    fps: float = 30.0

    @property
    def pixels(self) -> int:
        return self.width * self.height

    @property
    def is_synthetic(self) -> bool:
        return self.path.startswith("synth:")

    def resized(self, width: int, height: int, path: str) -> "ClipRef":
        return replace(self, width=width, height=height, path=path)


def round_k(k: float) -> float:
    return round(float(k), K_DECIMALS)


@dataclass(frozen=True)
class EncodeJob:
    clip: ClipRef
    codec: Codec
    crf: int
    k: float = 1.0
    preset: Preset = Preset.DEFAULT
    frames: int = STANDARD_FRAMES

    def __post_init__(self):
        object.__setattr__(self, "codec", Codec(self.codec))
        object.__setattr__(self, "preset", Preset(self.preset))
        object.__setattr__(self, "k", round_k(self.k))
        lo, hi = CRF_RANGE[self.codec]
        if not lo <= self.crf <= hi:
            raise ValueError(f"crf {self.crf} outside {self.codec.value} range [{lo}, {hi}]")
        if self.frames <= 0:
            raise ValueError("frames must be positive")
        if not 0.0 < self.k < 6.0:
            raise ValueError(f"k={self.k} outside (0, 6)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["codec"] = self.codec.value
        d["preset"] = self.preset.value
        return d

    def key(self, salt: str = "") -> str:
        """Content hash of every field (plus an optional backend fingerprint)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + salt
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class FrameTypeStats:
    avg_bitrate_kbps: float
    avg_psnr_y: float
    avg_psnr_u: float
    avg_psnr_v: float
    count: int = 0


@dataclass(frozen=True)
class EncodeResult:
    bitrate_kbps: float
    psnr_overall: float
    psnr_y: float
    psnr_u: float
    psnr_v: float
    width: int
    height: int
    wall_time_s: float
    per_frame_type: dict[str, FrameTypeStats] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.bitrate_kbps > 0 and math.isfinite(self.bitrate_kbps)):
            raise ValueError(f"bitrate must be positive, got {self.bitrate_kbps}")
        for name in ("psnr_overall", "psnr_y", "psnr_u", "psnr_v"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")
        bad = set(self.per_frame_type) - set(FRAME_TYPES)
        if bad:
            raise ValueError(f"unknown frame types {sorted(bad)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncodeResult":
        d = dict(d)
        d["per_frame_type"] = {t: FrameTypeStats(**s) for t, s in d.get("per_frame_type", {}).items()}
        return cls(**d)
