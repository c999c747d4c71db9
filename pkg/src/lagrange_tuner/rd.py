"""Rate-distortion points, curves and the Bjontegaard delta-rate.

BD-Rate follows the classic recipe: fit log10(rate) as a cubic in PSNR for
each curve, integrate the difference of the fits over the shared PSNR range
and convert the mean log difference to a percentage.  Negative values mean
the test curve needs less rate for the same quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidCurveError

#: Overlaps narrower than this (dB) are not integrated; the cubic fits would
#: effectively be extrapolated.
MIN_OVERLAP_DB = 0.5

FIT_DEGREE = 3


@dataclass(frozen=True)
class RDPoint:
    rate: float  # kbps
    quality: float  # PSNR dB

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise InvalidCurveError(f"rate must be positive and finite, got {self.rate!r}")
        if not math.isfinite(self.quality):
            raise InvalidCurveError(f"quality must be finite, got {self.quality!r}")


@dataclass(frozen=True)
class RDCurve:
    """Operating points of one clip/configuration, sorted by quality.

    Construction rejects curves that are not strictly monotone: quality and
    rate must both strictly increase.  Duplicate PSNR values are an error,
    never averaged.
    """

    points: tuple[RDPoint, ...]
    label: str = ""

    def __init__(self, points: Iterable[RDPoint | tuple[float, float]], label: str = ""):
        pts = [p if isinstance(p, RDPoint) else RDPoint(float(p[0]), float(p[1])) for p in points]
        pts.sort(key=lambda p: p.quality)
        if len(pts) < FIT_DEGREE + 1:
            raise InvalidCurveError(f"need at least {FIT_DEGREE + 1} points, got {len(pts)}")
        for a, b in zip(pts, pts[1:]):
            if b.quality == a.quality:
                raise InvalidCurveError(f"duplicate quality {a.quality} dB")
            if b.rate <= a.rate:
                raise InvalidCurveError(
                    f"non-monotone curve: rate {b.rate} at {b.quality} dB "
                    f"is not above {a.rate} at {a.quality} dB"
                )
        object.__setattr__(self, "points", tuple(pts))
        object.__setattr__(self, "label", label)

    @classmethod
    def from_arrays(cls, rates: Sequence[float], qualities: Sequence[float], label: str = "") -> "RDCurve":
        if len(rates) != len(qualities):
            raise InvalidCurveError("rates and qualities differ in length")
        return cls(zip(rates, qualities), label=label)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    @property
    def quality_range(self) -> tuple[float, float]:
        return self.points[0].quality, self.points[-1].quality

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PolyFit:
    """Cubic fit of log10(rate) against quality.

    The fit is carried out in the centred variable ``quality - center`` for
    conditioning; ``coefficients`` converts back to plain powers of quality.
    """

    centered: tuple[float, ...]  # ascending powers of (quality - center)
    center: float

    def __call__(self, quality):
        return np.polynomial.polynomial.polyval(np.asarray(quality, dtype=float) - self.center, self.centered)

    @property
    def coefficients(self) -> np.ndarray:
        """Ascending-power coefficients in the raw quality variable."""
        shifted = np.polynomial.Polynomial(self.centered)
        shift = np.polynomial.Polynomial([-self.center, 1.0])
        return np.pad(shifted(shift).coef, (0, FIT_DEGREE + 1))[: FIT_DEGREE + 1]

    def integral(self, lo: float, hi: float) -> float:
        anti = np.polynomial.polynomial.polyint(self.centered)
        return float(
            np.polynomial.polynomial.polyval(hi - self.center, anti)
            - np.polynomial.polynomial.polyval(lo - self.center, anti)
        )


def fit_log_rate_curve(curve: RDCurve) -> PolyFit:
    q = curve.qualities
    if len(np.unique(q)) != len(q):
        raise InvalidCurveError("duplicate quality values")
    center = float(q.mean())
    x = q - center
    vander = np.vander(x, FIT_DEGREE + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(vander, np.log10(curve.rates), rcond=None)
    return PolyFit(tuple(float(c) for c in coef), center)


@dataclass(frozen=True)
class BDRateResult:
    bd_rate_percent: float
    overlap: tuple[float, float]
    valid: bool
    reason: str = ""

    @property
    def gain_percent(self) -> float:
        """Rate saving as reported in summaries: positive when the test curve is cheaper."""
        return -self.bd_rate_percent


def overlap(reference: RDCurve, test: RDCurve) -> tuple[float, float]:
    lo = max(reference.quality_range[0], test.quality_range[0])
    hi = min(reference.quality_range[1], test.quality_range[1])
    return lo, hi


def bd_rate(reference: RDCurve, test: RDCurve) -> BDRateResult:
    d_a, d_b = overlap(reference, test)
    if d_b - d_a < MIN_OVERLAP_DB:
        reason = "no quality overlap" if d_b <= d_a else f"overlap {d_b - d_a:.3f} dB below {MIN_OVERLAP_DB} dB"
        return BDRateResult(math.nan, (d_a, d_b), False, reason)
    fit_ref = fit_log_rate_curve(reference)
    fit_test = fit_log_rate_curve(test)
    avg_diff = (fit_test.integral(d_a, d_b) - fit_ref.integral(d_a, d_b)) / (d_b - d_a)
    return BDRateResult((10.0**avg_diff - 1.0) * 100.0, (d_a, d_b), True)


def bd_objective(k_curve: RDCurve, baseline: RDCurve) -> float:
    """BD-Rate of the k curve against the k=1 baseline; +inf when not computable."""
    res = bd_rate(baseline, k_curve)
    return res.bd_rate_percent if res.valid else math.inf
