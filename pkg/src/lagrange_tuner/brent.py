"""Brent's parabolic/golden-section minimiser (Numerical Recipes formulation).

Two stopping rules apply, whichever fires first:

* the usual Brent x-interval test with relative tolerance ``x_tol``;
* an objective rule: the search stops once ``patience`` successive new best
  values have each improved on the previous best by less than ``rel_tol``
  (a fraction of the new best's magnitude, or an absolute amount with
  ``tol_mode="absolute"``).  Iterations that do not find a new best neither
  count toward nor reset the rule.

``max_iter`` caps the number of Brent iterations (bracketing evaluations are
counted separately in ``BrentResult.evaluations``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

GOLDEN = 0.3819660112501051  # 2 - phi
ZEPS = 1e-12

Termination = Literal["converged", "max_iter", "infeasible"]


@dataclass
class BrentResult:
    x: float
    fx: float
    iterations: int
    terminated_by: Termination
    evaluations: list[tuple[float, float]] = field(default_factory=list)


class _Recorder:
    def __init__(self, f: Callable[[float], float]):
        self.f = f
        self.evaluations: list[tuple[float, float]] = []

    def __call__(self, x: float) -> float:
        fx = self.f(x)
        if math.isnan(fx):
            fx = math.inf
        self.evaluations.append((x, fx))
        return fx


def bracket_minimum(f, lo, mid, hi, f_mid=None, bounds=None, grow=2.0, max_expand=40):
    """Find (a, b, c) with f(b) <= min(f(a), f(c)), expanding toward ``bounds``.

    Expansion is geometric in the distance to the bound: each step halves (for
    ``grow=2``) the gap between the active end and its bound.  Returns
    ``None`` when the function keeps decreasing into a bound.
    """
    lower, upper = bounds if bounds is not None else (lo, hi)
    f_mid = f(mid) if f_mid is None else f_mid
    f_lo, f_hi = f(lo), f(hi)
    for _ in range(max_expand):
        if f_mid <= f_lo and f_mid <= f_hi:
            return (lo, mid, hi), (f_lo, f_mid, f_hi)
        if f_lo < f_hi:
            if lo - lower <= ZEPS * max(1.0, abs(lower)) or lo <= lower:
                return None
            hi, f_hi, mid, f_mid = mid, f_mid, lo, f_lo
            lo = lower + (lo - lower) / grow
            f_lo = f(lo)
        else:
            if upper - hi <= ZEPS * max(1.0, abs(upper)) or hi >= upper:
                return None
            lo, f_lo, mid, f_mid = mid, f_mid, hi, f_hi
            hi = upper - (upper - hi) / grow
            f_hi = f(hi)
    return None


def brent_minimize(
    f: Callable[[float], float],
    bracket: tuple[float, float, float],
    rel_tol: float = 0.05,
    max_iter: int = 30,
    *,
    bounds: tuple[float, float] | None = None,
    x_tol: float = 1e-6,
    f_mid: float | None = None,
    tol_mode: Literal["relative", "absolute"] = "relative",
    patience: int = 2,
) -> BrentResult:
    """Minimise a scalar function starting from ``bracket = (lo, mid, hi)``.

    ``f_mid`` lets the caller supply an already known value at ``mid`` (the
    optimiser knows the baseline objective is 0 without evaluating it).
    If no interior minimum can be bracketed within ``bounds`` the result is
    ``mid`` with ``terminated_by="infeasible"``.
    """
    lo, mid, hi = bracket
    if not lo < mid < hi:
        raise ValueError(f"bracket must satisfy lo < mid < hi, got {bracket}")
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    rec = _Recorder(f)
    if f_mid is None:
        f_mid = rec(mid)
    else:
        rec.evaluations.append((mid, f_mid))
    found = bracket_minimum(rec, lo, mid, hi, f_mid=f_mid, bounds=bounds)
    if found is None:
        return BrentResult(mid, f_mid, 0, "infeasible", rec.evaluations)
    (a, x, b), (_, fx, _) = found
    a, b = min(a, b), max(a, b)

    # w: second best, v: previous w
    w = v = x
    fw = fv = fx
    d = e = 0.0
    best = fx
    stalled = 0
    for it in range(1, max_iter + 1):
        xm = 0.5 * (a + b)
        tol1 = x_tol * abs(x) + ZEPS
        tol2 = 2.0 * tol1
        if abs(x - xm) <= tol2 - 0.5 * (b - a):
            return BrentResult(x, fx, it - 1, "converged", rec.evaluations)
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            etemp = e
            e = d
            if (
                not all(map(math.isfinite, (p, q)))
                or abs(p) >= abs(0.5 * q * etemp)
                or p <= q * (a - x)
                or p >= q * (b - x)
            ):
                e = a - x if x >= xm else b - x
                d = GOLDEN * e
            else:
                d = p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = math.copysign(tol1, xm - x)
        else:
            e = a - x if x >= xm else b - x
            d = GOLDEN * e
        u = x + d if abs(d) >= tol1 else x + math.copysign(tol1, d)
        fu = rec(u)
        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
        if fx < best:
            improvement = best - fx
            best = fx
            limit = rel_tol * abs(fx) if tol_mode == "relative" else rel_tol
            stalled = stalled + 1 if improvement < limit else 0
            if stalled >= patience:
                return BrentResult(x, fx, it, "converged", rec.evaluations)
    return BrentResult(x, fx, max_iter, "max_iter", rec.evaluations)
