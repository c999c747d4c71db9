"""Deterministic closed-form codec simulator.

Each synthetic clip has a planted optimal multiplier ``k_star``.  Changing k
leaves PSNR untouched and inflates the rate at every operating point by
``1 + beta * (ln k - ln k_star)**2``, so BD-Rate as a function of k has a
unique minimum at ``k_star``.

Proxy encodes (downscaled clip, fast preset, H.264) see a perturbed
``k_star``.  The perturbation is additive Gaussian noise scaled so that the
Pearson correlation between proxy and original ``k_star`` over a corpus is
the configured ``rho`` (rho = 1 gives an identical optimum).

Encode time is simulated as ``cost_per_pixel_frame * width * height *
frames`` times per-codec and per-preset factors.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import BackendUnavailable
from .jobs import Codec, ClipRef, EncodeJob, EncodeResult, FrameTypeStats, Preset

DOWNSCALE_MARK = "#down"

# Defaults follow the per-clip times of the VP9/HEVC timing comparison
# (HEVC 720p, 150 frames ~ 19.5 s); only ratios matter for speedups.
_CODEC_COST = {"hevc": 1.0, "vp9": 2.58, "h264": 0.277, "synth": 1.0}
_FAST_COST = {"hevc": 1 / 3.07, "vp9": 1 / 1.07, "h264": 1 / 3.0, "synth": 1 / 3.0}


def _unit_normal(*parts) -> float:
    """Deterministic N(0, 1) draw keyed by ``parts``."""
    h = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return float(np.random.default_rng(int.from_bytes(h[:8], "little")).standard_normal())


def _rng(*parts) -> np.random.Generator:
    h = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "little"))


@dataclass(frozen=True)
class SynthParams:
    r0: float  # kbps at CRF 22
    alpha: float  # log10-rate drop per 5 CRF steps
    k_star: float
    beta: float
    d0: float  # PSNR-Y at CRF 22
    psnr_slope: float  # dB lost per CRF step
    temporal: float = 0.5  # latent in [0, 1]; shapes the frame-type statistics
    chroma_u: float = 2.5
    chroma_v: float = 3.0

    def __post_init__(self):
        for name in ("r0", "alpha", "k_star", "beta", "d0", "psnr_slope"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


def synth_model(params: SynthParams, crf: int, k: float) -> tuple[float, float]:
    """Closed-form (rate_kbps, psnr_y) of one synthetic encode."""
    if k <= 0:
        raise ValueError("k must be positive")
    inflation = 1.0 + params.beta * (math.log(k) - math.log(params.k_star)) ** 2
    rate = params.r0 * 10.0 ** (-params.alpha * (crf - 22) / 5.0) * inflation
    psnr = params.d0 - params.psnr_slope * (crf - 22)
    return rate, psnr


def frame_type_counts(frames: int, b_frames: bool = True) -> dict[str, int]:
    """One I frame every 30 frames; the rest alternate P, B, P, B, ..."""
    n_i = math.ceil(frames / 30)
    rest = frames - n_i
    if not b_frames:
        return {"I": n_i, "P": rest, "B": 0}
    return {"I": n_i, "P": math.ceil(rest / 2), "B": rest // 2}


def frame_type_profile(temporal: float) -> dict[str, tuple[float, float]]:
    """Relative bits per frame and PSNR-Y offset (dB) for each frame type."""
    t = temporal
    return {
        "I": (3.0 + 5.0 * (1.0 - t), 0.8 + 0.6 * (1.0 - t)),
        "P": (1.5 + 0.5 * t, 0.0),
        "B": (0.6 + 0.6 * t, -(0.3 + 1.4 * t)),
    }


def overall_psnr(y: float, u: float, v: float) -> float:
    """6:1:1 luma/chroma weighting, as reported by x265."""
    return (6.0 * y + u + v) / 8.0


@dataclass(frozen=True)
class SynthConfig:
    k_star_range: tuple[float, float] = (0.3, 4.0)
    beta_range: tuple[float, float] = (0.01, 0.1)
    rho: dict = field(default_factory=lambda: {"downscale": 0.9, "fast": 0.97, "h264": 0.8})
    cost_per_pixel_frame: float = 1.4e-7
    codec_cost: dict = field(default_factory=lambda: dict(_CODEC_COST))
    fast_cost: dict = field(default_factory=lambda: dict(_FAST_COST))
    downscale_cost_per_pixel_frame: float = 0.0
    b_frames: bool = True

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def log_k_star_std(self) -> float:
        """Standard deviation of ln k_star (uniform on the log range)."""
        a, b = self.k_star_range
        return math.log(b / a) / math.sqrt(12.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_star_range"] = list(self.k_star_range)
        d["beta_range"] = list(self.beta_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("k_star_range", "beta_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def base_path(path: str) -> str:
    return path.split(DOWNSCALE_MARK, 1)[0]


def clip_params(path: str, pixels: int, config: SynthConfig) -> SynthParams:
    """Latent parameters of the original (full-resolution, target codec) clip."""
    rng = _rng("params", base_path(path))
    lo, hi = config.k_star_range
    u = rng.uniform()
    k_star = lo * (hi / lo) ** u
    beta = rng.uniform(*config.beta_range)
    density = math.exp(rng.normal(math.log(5.0e-2), 0.5))  # kbps per pixel**0.8 at CRF 22
    params = SynthParams(
        r0=density * pixels**0.8,
        alpha=rng.uniform(0.12, 0.25),
        k_star=k_star,
        beta=beta,
        d0=rng.uniform(40.0, 46.0),
        psnr_slope=rng.uniform(0.35, 0.6),
        temporal=float(np.clip(0.6 * u + 0.4 * rng.uniform(), 0.0, 1.0)),
        chroma_u=rng.uniform(1.5, 4.0),
        chroma_v=rng.uniform(2.0, 5.0),
    )
    overrides = path_overrides(path)
    return replace(params, **overrides) if overrides else params


def path_overrides(path: str) -> dict[str, float]:
    """Explicit parameters in a clip URI, e.g. ``synth:0:3?k_star=1.6&beta=0.05``."""
    query = base_path(path).partition("?")[2]
    if not query:
        return {}
    allowed = set(SynthParams.__dataclass_fields__)
    out = {}
    for item in query.split("&"):
        name, _, value = item.partition("=")
        if name not in allowed:
            raise ValueError(f"unknown synthetic parameter {name!r} in {path}")
        out[name] = float(value)
    return out


def _k_position(k: float, config: SynthConfig) -> float:
    lo, hi = config.k_star_range
    if hi <= lo:
        return 0.5
    return min(max(math.log(k / lo) / math.log(hi / lo), 0.0), 1.0)


def proxy_kinds(job: EncodeJob) -> list[str]:
    kinds = []
    if DOWNSCALE_MARK in job.clip.path:
        kinds.append("downscale")
    if job.preset is Preset.FAST:
        kinds.append("fast")
    if job.codec is Codec.H264:
        kinds.append("h264")
    return kinds


def perturbed_k_star(path: str, k_star: float, kinds: list[str], config: SynthConfig) -> float:
    """Proxy optimum whose log has correlation ``rho`` with ln k_star over the corpus.

    ln k' = ln k* + sigma * sqrt(1/rho^2 - 1) * z, where sigma is the corpus
    spread of ln k*.  Each proxy kind adds its own independent draw.
    """
    sigma = config.log_k_star_std
    log_k = math.log(k_star)
    for kind in kinds:
        rho = config.rho.get(kind, 1.0)
        if not 0 < rho <= 1:
            raise ValueError(f"proxy correlation for {kind} must be in (0, 1], got {rho}")
        log_k += sigma * math.sqrt(1.0 / rho**2 - 1.0) * _unit_normal("proxy", kind, base_path(path))
    return float(np.clip(math.exp(log_k), 0.05, 5.9))


def job_params(job: EncodeJob, config: SynthConfig) -> SynthParams:
    params = clip_params(job.clip.path, job.clip.pixels, config)
    kinds = proxy_kinds(job)
    if not kinds:
        return params
    k_proxy = perturbed_k_star(job.clip.path, params.k_star, kinds, config)
    d0 = params.d0 + (1.5 if "downscale" in kinds else 0.0) - (0.8 if "h264" in kinds else 0.0)
    # proxy frame statistics follow the proxy's own optimum
    shift = _k_position(k_proxy, config) - _k_position(params.k_star, config)
    temporal = float(np.clip(params.temporal + 0.6 * shift, 0.0, 1.0))
    return SynthParams(
        r0=params.r0 * (1.6 if "h264" in kinds else 1.0) * (1.25 if "fast" in kinds else 1.0),
        alpha=params.alpha,
        k_star=k_proxy,
        beta=params.beta,
        d0=d0,
        psnr_slope=params.psnr_slope,
        temporal=temporal,
        chroma_u=params.chroma_u,
        chroma_v=params.chroma_v,
    )


def synth_encode(job: EncodeJob, config: SynthConfig) -> EncodeResult:
    params = job_params(job, config)
    rate, psnr_y = synth_model(params, job.crf, job.k)
    counts = frame_type_counts(job.frames, config.b_frames)
    profile = frame_type_profile(params.temporal)
    present = [t for t in ("I", "P", "B") if counts[t] > 0]
    bits = sum(counts[t] * profile[t][0] for t in present)
    mean_offset = sum(counts[t] * profile[t][1] for t in present) / job.frames
    per_type = {}
    for t in present:
        y = psnr_y + profile[t][1] - mean_offset
        per_type[t] = FrameTypeStats(
            avg_bitrate_kbps=rate * job.frames * profile[t][0] / bits,
            avg_psnr_y=y,
            avg_psnr_u=y + params.chroma_u,
            avg_psnr_v=y + params.chroma_v,
            count=counts[t],
        )
    psnr_u, psnr_v = psnr_y + params.chroma_u, psnr_y + params.chroma_v
    cost = (
        config.cost_per_pixel_frame
        * job.clip.pixels
        * job.frames
        * config.codec_cost[job.codec.value]
        * (config.fast_cost[job.codec.value] if job.preset is Preset.FAST else 1.0)
    )
    return EncodeResult(
        bitrate_kbps=rate,
        psnr_overall=overall_psnr(psnr_y, psnr_u, psnr_v),
        psnr_y=psnr_y,
        psnr_u=psnr_u,
        psnr_v=psnr_v,
        width=job.clip.width,
        height=job.clip.height,
        wall_time_s=cost,
        per_frame_type=per_type,
    )


def scaled_dims(width: int, height: int, target_height: int) -> tuple[int, int]:
    w = int(round(width * target_height / height / 2.0)) * 2
    return max(w, 2), target_height


class SynthBackend:
    """Simulated encoder for any codec; ``codecs`` limits which ones are 'installed'."""

    name = "synth"

    def __init__(self, config: SynthConfig | None = None, codecs=None):
        self.config = config or SynthConfig()
        self.codecs = {Codec(c) for c in codecs} if codecs is not None else set(Codec)
        self.runs = 0
        self.downscale_runs = 0

    def fingerprint(self) -> str:
        return f"synth:{self.config.fingerprint()}"

    def available(self, codec: Codec) -> bool:
        return Codec(codec) in self.codecs

    def supports_k(self, codec: Codec) -> bool:
        return True

    def encode(self, job: EncodeJob) -> tuple[EncodeResult, str]:
        if not self.available(job.codec):
            raise BackendUnavailable(f"synthetic backend configured without {job.codec.value}")
        if not job.clip.is_synthetic:
            raise ValueError(f"synthetic backend cannot encode {job.clip.path}")
        self.runs += 1
        result = synth_encode(job, self.config)
        log = f"synth {job.codec.value} crf={job.crf} k={job.k} preset={job.preset.value} " \
              f"{result.bitrate_kbps:.6f} kb/s PSNR-Y {result.psnr_y:.6f}"
        return result, log

    def downscale(self, clip: ClipRef, target_height: int = 144) -> tuple[ClipRef, float]:
        """Returns the proxy clip and the simulated scaler time."""
        w, h = scaled_dims(clip.width, clip.height, target_height)
        self.downscale_runs += 1
        cost = self.config.downscale_cost_per_pixel_frame * clip.pixels * clip.frames
        path = f"{base_path(clip.path)}{DOWNSCALE_MARK}{h}"
        return clip.resized(w, h, path), cost


def synthetic_clip(
    seed: int, index: int, width: int = 1280, height: int = 720, frames: int = 150, **overrides: float
) -> ClipRef:
    path = f"synth:{seed}:{index}"
    if overrides:
        path += "?" + "&".join(f"{k}={v!r}" for k, v in sorted(overrides.items()))
    return ClipRef(f"synth-{seed}-{index:05d}", path, width, height, frames)
