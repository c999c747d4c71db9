"""Synthetic datasets with a known answer, used to check the ML pipeline."""

from __future__ import annotations

import numpy as np

from .encoding import Codec, EncodeJob, SynthConfig, synthetic_clip
from .encoding.synth import synth_encode
from .features import BASE_FEATURES, extract_features

RESOLUTIONS = ((640, 360), (854, 480), (1280, 720), (1920, 1080))


def synthetic_feature_matrix(n: int, seed: int = 0, crf: int = 32) -> np.ndarray:
    """Feature vectors of k=1 encodes of ``n`` simulated clips at mixed resolutions."""
    rng = np.random.default_rng(seed)
    dims = rng.integers(0, len(RESOLUTIONS), n)
    config = SynthConfig()
    rows = []
    for i in range(n):
        w, h = RESOLUTIONS[dims[i]]
        result = synth_encode(EncodeJob(synthetic_clip(seed, i, w, h), Codec.SYNTH, crf), config)
        rows.append(extract_features(result).values)
    return np.array(rows)


def learnability_set(
    n: int = 2000,
    noise: float = 0.05,
    seed: int = 0,
    informative: tuple[str, ...] = ("bitrate", "psnr_y", "I_kbps"),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rows (X, k, w) with k = 0.5 + 2 * sigmoid(w . z) + N(0, noise).

    ``z`` is the standardised feature matrix and ``w`` is nonzero only on
    the ``informative`` base features.
    """
    X = synthetic_feature_matrix(n, seed)
    rng = np.random.default_rng([seed, 1])
    z = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
    w = np.zeros(X.shape[1])
    idx = [BASE_FEATURES.index(name) for name in informative]
    w[idx] = rng.choice([-1.0, 1.0], len(idx)) * rng.uniform(0.8, 1.5, len(idx))
    k = 0.5 + 2.0 / (1.0 + np.exp(-(z @ w))) + rng.normal(0.0, noise, n)
    return X, np.clip(k, 1e-3, 6 - 1e-3), w
