"""Bitstream feature vectors for k regression.

Ordering (version ``FEATURE_VERSION``): the 19 base features in
``BASE_FEATURES`` followed by the 30 pair products in ``PRODUCT_PAIRS``.
Both lists are the contract with saved models; ``ordering_hash`` covers
the names, so any reordering invalidates existing model files.

Frame types absent from an encode (no B frames, VP9 logs with no per-type
lines) contribute zeros and are flagged in ``FeatureVector.mask``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .encoding import EncodeResult
from .encoding.jobs import FRAME_TYPES

FEATURE_VERSION = 1
DEFAULT_SOURCE_CRF = 32

BASE_FEATURES: tuple[str, ...] = (
    "bitrate",
    "psnr",
    "psnr_y",
    "psnr_u",
    "psnr_v",
    *(f"{t}_kbps" for t in FRAME_TYPES),
    *(f"{t}_psnr_{c}" for t in FRAME_TYPES for c in "yuv"),
    "height",
    "width",
)

PRODUCT_PAIRS: tuple[tuple[str, str], ...] = (
    ("bitrate", "psnr"),
    ("bitrate", "psnr_y"),
    ("bitrate", "psnr_u"),
    ("bitrate", "psnr_v"),
    ("height", "width"),
    ("bitrate", "height"),
    ("bitrate", "width"),
    *((f"{t}_kbps", f"{t}_psnr_{c}") for t in FRAME_TYPES for c in "yuv"),
    ("I_kbps", "P_kbps"),
    ("I_kbps", "B_kbps"),
    ("P_kbps", "B_kbps"),
    ("I_psnr_y", "P_psnr_y"),
    ("I_psnr_y", "B_psnr_y"),
    ("P_psnr_y", "B_psnr_y"),
    ("psnr_y", "psnr_u"),
    ("psnr_y", "psnr_v"),
    ("psnr_u", "psnr_v"),
    *(("bitrate", f"{t}_kbps") for t in FRAME_TYPES),
    ("psnr", "height"),
    ("psnr", "width"),
)

FEATURE_NAMES: tuple[str, ...] = BASE_FEATURES + tuple(f"{a}*{b}" for a, b in PRODUCT_PAIRS)
N_FEATURES = len(FEATURE_NAMES)

_INDEX = {name: i for i, name in enumerate(BASE_FEATURES)}
_PAIR_IDX = np.array([[_INDEX[a], _INDEX[b]] for a, b in PRODUCT_PAIRS])

assert len(BASE_FEATURES) == 19 and N_FEATURES == 49


def ordering_hash() -> str:
    text = f"v{FEATURE_VERSION}:" + ",".join(FEATURE_NAMES)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    mask: tuple[str, ...] = ()  # frame types filled with zeros
    version: int = FEATURE_VERSION

    def __post_init__(self):
        if len(self.values) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {len(self.values)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("features must be finite")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def named(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values))


def extend(base: np.ndarray) -> np.ndarray:
    """Append the pair products to one base row (19,) or a batch (n, 19)."""
    base = np.asarray(base, dtype=float)
    products = base[..., _PAIR_IDX[:, 0]] * base[..., _PAIR_IDX[:, 1]]
    return np.concatenate([base, products], axis=-1)


def base_features(result: EncodeResult) -> tuple[np.ndarray, tuple[str, ...]]:
    if result.bitrate_kbps <= 0:
        raise ValueError("bitrate must be positive")
    row = [result.bitrate_kbps, result.psnr_overall, result.psnr_y, result.psnr_u, result.psnr_v]
    per_type = result.per_frame_type
    missing = tuple(t for t in FRAME_TYPES if t not in per_type or per_type[t].count == 0)
    row += [0.0 if t in missing else per_type[t].avg_bitrate_kbps for t in FRAME_TYPES]
    for t in FRAME_TYPES:
        s = per_type.get(t)
        row += [0.0, 0.0, 0.0] if t in missing else [s.avg_psnr_y, s.avg_psnr_u, s.avg_psnr_v]
    row += [float(result.height), float(result.width)]
    return np.array(row, dtype=float), missing


def extract_features(encodes, source_crf: int | None = DEFAULT_SOURCE_CRF) -> FeatureVector:
    """Feature vector of one proxy encode set.

    ``encodes`` is a single EncodeResult, a list of them, or a mapping
    crf -> EncodeResult.  With a mapping the ``source_crf`` entry is used;
    with a list the middle element (CRF 32 of the standard five).
    """
    if isinstance(encodes, EncodeResult):
        result = encodes
    elif isinstance(encodes, dict):
        if source_crf not in encodes:
            raise KeyError(f"no encode at CRF {source_crf}")
        result = encodes[source_crf]
    else:
        encodes = list(encodes)
        if not encodes:
            raise ValueError("need at least one encode")
        result = encodes[len(encodes) // 2]
    base, missing = base_features(result)
    return FeatureVector(tuple(extend(base).tolist()), missing)


def from_named(named: dict[str, float]) -> FeatureVector:
    """Build a vector from the 19 named base features (extras ignored)."""
    absent = [n for n in BASE_FEATURES if n not in named]
    if absent:
        raise KeyError(f"missing base features: {', '.join(absent)}")
    base = np.array([float(named[n]) for n in BASE_FEATURES])
    return FeatureVector(tuple(extend(base).tolist()))
