"""Per-clip search for the multiplier k that minimises BD-Rate against k = 1."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

from .brent import brent_minimize
from .encoding import ClipRef, Codec, Encoder, EncodeStats, Preset, round_k
from .errors import EncodeFailure, InvalidCurveError
from .rd import RDCurve, bd_objective

log = logging.getLogger(__name__)

K_MIN, K_MAX = 0.0, 6.0
STANDARD_CRFS = (22, 27, 32, 37, 42)


class KMultiplier(float):
    """Scale applied to the encoder's default Lagrangian; 0 < k < 6."""

    def __new__(cls, value):
        v = float(value)
        if not K_MIN < v < K_MAX:
            raise ValueError(f"k={v} outside ({K_MIN}, {K_MAX})")
        return super().__new__(cls, v)


@dataclass(frozen=True)
class OptimizeConfig:
    codec: Codec = Codec.HEVC
    preset: Preset = Preset.DEFAULT
    crfs: tuple[int, ...] = STANDARD_CRFS
    rel_tol: float = 5e-4  # stop when a new best improves by < 0.05 % of itself
    tol_mode: str = "relative"
    max_iter: int = 30
    bracket: tuple[float, float, float] = (0.2, 1.0, 3.0)
    bounds: tuple[float, float] = (0.01, 5.99)
    x_tol: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "codec", Codec(self.codec))
        object.__setattr__(self, "preset", Preset(self.preset))
        if len(self.crfs) < 4 or len(set(self.crfs)) != len(self.crfs):
            raise ValueError("need at least 4 distinct operating points")
        if self.bracket[1] != 1.0:
            raise ValueError("the search starts from k = 1.0")


@dataclass(frozen=True)
class Evaluation:
    k: float
    objective: float  # BD-Rate percent vs k=1 (inf when infeasible)
    encode_count: int


@dataclass
class OptimizationTrace:
    evaluations: list[Evaluation] = field(default_factory=list)
    iterations: int = 0
    k_opt: float = 1.0
    best_objective: float = 0.0
    terminated_by: str = "converged"


@dataclass
class OptimizationResult:
    clip_id: str
    codec: str
    preset: str
    status: str  # "ok" | "failed"
    k_opt: float
    gain_percent: float
    iterations: int
    encodes: int
    encode_time_s: float
    terminated_by: str
    trace: OptimizationTrace
    reason: str = ""
    new_encodes: int = 0
    elapsed_s: float = 0.0

    def to_record(self) -> dict:
        """Deterministic fields only (no cache-hit counts or wall-clock elapsed)."""
        d = asdict(self)
        d.pop("new_encodes")
        d.pop("elapsed_s")
        d["trace"]["evaluations"] = [
            [e["k"], _json_float(e["objective"]), e["encode_count"]] for e in d["trace"]["evaluations"]
        ]
        return d


def _json_float(x: float):
    return x if math.isfinite(x) else None


def curve_from_results(results, label: str = "") -> RDCurve:
    return RDCurve(((r.bitrate_kbps, r.psnr_y) for r in results), label=label)


def encode_curve(
    encoder: Encoder, clip: ClipRef, config: OptimizeConfig, k: float, stats: EncodeStats | None = None
) -> RDCurve:
    results = encoder.encode_set(clip, config.codec, config.crfs, k, config.preset, stats)
    return curve_from_results(results, label=f"k={round_k(k)}")


def optimize_clip(clip: ClipRef, encoder: Encoder, config: OptimizeConfig | None = None) -> OptimizationResult:
    """Brent search over k for one clip in one encoder configuration.

    The k=1 curve is encoded once and shared by every evaluation.  An
    evaluation whose encodes fail or whose curve is not monotone scores +inf
    so the search can back away from it.
    """
    config = config or OptimizeConfig()
    stats = EncodeStats()
    t0 = time.perf_counter()
    n_points = len(config.crfs)

    def failed(reason: str) -> OptimizationResult:
        return OptimizationResult(
            clip.clip_id, config.codec.value, config.preset.value, "failed", 1.0, 0.0, 0,
            stats.requests, stats.encode_time_s, "infeasible", OptimizationTrace(), reason,
            stats.runs, time.perf_counter() - t0,
        )

    try:
        baseline = encode_curve(encoder, clip, config, 1.0, stats)
    except (EncodeFailure, InvalidCurveError) as e:
        log.warning("baseline for %s failed: %s", clip.clip_id, e)
        return failed(f"baseline: {e}")

    trace = OptimizationTrace()
    trace.evaluations.append(Evaluation(1.0, 0.0, n_points))
    memo: dict[float, float] = {1.0: 0.0}

    def objective(k: float) -> float:
        k = round_k(k)
        if k not in memo:
            try:
                memo[k] = bd_objective(encode_curve(encoder, clip, config, k, stats), baseline)
            except (EncodeFailure, InvalidCurveError) as e:
                log.info("k=%s infeasible for %s: %s", k, clip.clip_id, e)
                memo[k] = math.inf
        trace.evaluations.append(Evaluation(k, memo[k], n_points))
        return memo[k]

    res = brent_minimize(
        objective,
        config.bracket,
        rel_tol=config.rel_tol,
        max_iter=config.max_iter,
        bounds=config.bounds,
        x_tol=config.x_tol,
        f_mid=0.0,
        tol_mode=config.tol_mode,
    )
    if res.terminated_by == "infeasible" or not math.isfinite(res.fx) or res.fx > 0:
        k_opt, best = 1.0, 0.0
    else:
        k_opt, best = round_k(res.x), res.fx
    trace.iterations = len(trace.evaluations) - 1
    trace.k_opt = k_opt
    trace.best_objective = best
    trace.terminated_by = res.terminated_by
    return OptimizationResult(
        clip_id=clip.clip_id,
        codec=config.codec.value,
        preset=config.preset.value,
        status="ok",
        k_opt=float(KMultiplier(k_opt)),
        gain_percent=-best if best != 0 else 0.0,
        iterations=trace.iterations,
        encodes=stats.requests,
        encode_time_s=stats.encode_time_s,
        terminated_by=res.terminated_by,
        trace=trace,
        new_encodes=stats.runs,
        elapsed_s=time.perf_counter() - t0,
    )
