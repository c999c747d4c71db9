"""Default Lagrangian multiplier laws as a function of the quantiser.

H.264/H.265 use per-frame-type exponential laws in QP; VP9's RD multiplier
is proportional to the squared quantiser step.  ``scaled`` applies the
per-clip multiplier k on top of any of them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .jobs import Codec


def _hevc_lambda(q: float, frame_type: str) -> float:
    base = 2.0 ** ((q - 12.0) / 3.0)
    if frame_type == "I":
        return 0.57 * base
    if frame_type == "P":
        return 0.85 * base
    if frame_type == "B":
        return 0.68 * max(2.0, min(4.0, (q - 12.0) / 6.0)) * base
    raise ValueError(f"unknown frame type {frame_type!r}")


@dataclass(frozen=True)
class LambdaModel:
    codec: Codec
    # VP9: lambda = scale[frame_type] * q**2 (q is the quantiser step, > 0)
    q2_scale: tuple[tuple[str, float], ...] = (("I", 0.85), ("P", 0.85), ("B", 0.85))

    @property
    def q_range(self) -> tuple[float, float]:
        if self.codec is Codec.VP9:
            return (1.0, 1828.0)  # ac quantiser steps of the 8-bit tables
        return (0.0, 51.0)

    def lambda_orig(self, q: float, frame_type: str) -> float:
        lo, hi = self.q_range
        if not lo <= q <= hi:
            raise ValueError(f"q={q} outside {self.q_range}")
        if self.codec is Codec.VP9:
            return dict(self.q2_scale)[frame_type] * q * q
        return _hevc_lambda(q, frame_type)

    def scaled(self, q: float, frame_type: str, k: float) -> float:
        if k <= 0:
            raise ValueError("k must be positive")
        return k * self.lambda_orig(q, frame_type)


def sullivan_wiegand_lambda(q: float) -> float:
    """Single-law relationship lambda = 0.85 Q^2."""
    return 0.85 * q * q
