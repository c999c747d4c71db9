"""Systems S0-S3 and ML0-ML2: estimate k somewhere cheap, apply it to the target.

Each system has an estimate phase (Brent search, or one feature encode plus
a forest prediction) in its proxy configuration and an apply phase at the
original resolution and target codec.  The realized gain is always measured
in the target configuration against the target's own k = 1 curve.

Outcome states: ``ok``; ``fallback`` when estimation was infeasible and
k = 1 was used; ``skipped`` when a required backend, capability or model is
missing; ``failed`` when the target itself could not be encoded or measured.
"""

from __future__ import annotations

import enum
import logging
import tempfile
from typing import Callable
from dataclasses import asdict, dataclass, field, replace

from .encoding import ClipRef, Codec, EncodeCache, Encoder, EncodeStats, Preset, round_k
from .errors import (
    BackendUnavailable,
    EncodeFailure,
    InvalidCurveError,
    ModelVersionMismatch,
    TimingError,
    UnsupportedCapability,
)
from .features import DEFAULT_SOURCE_CRF, extract_features
from .forest import ForestModel, predict_k
from .optimizer import STANDARD_CRFS, OptimizeConfig, curve_from_results, optimize_clip
from .rd import bd_rate

log = logging.getLogger(__name__)

PROXY_HEIGHT = 144


class SystemId(str, enum.Enum):
    S0 = "S0"
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    ML0 = "ML0"
    ML1 = "ML1"
    ML2 = "ML2"

    @property
    def is_ml(self) -> bool:
        return self.value.startswith("ML")

    @property
    def source(self) -> str:
        """Where k is estimated: orig, 144p, fast or h264."""
        return {"S0": "orig", "S1": "144p", "S2": "fast", "S3": "h264",
                "ML0": "orig", "ML1": "144p", "ML2": "fast"}[self.value]


FEATURE_SOURCES = ("orig", "144p", "fast")


def parse_systems(text: str) -> list[SystemId]:
    out = []
    for part in text.split(","):
        part = part.strip().upper()
        if part:
            try:
                out.append(SystemId(part))
            except ValueError:
                raise ValueError(f"unknown system {part!r}; expected one of {[s.value for s in SystemId]}") from None
    return out


@dataclass(frozen=True)
class ProxyConfig:
    clip: ClipRef
    codec: Codec
    preset: Preset


@dataclass(frozen=True)
class SystemConfig:
    codec: Codec = Codec.HEVC
    crfs: tuple[int, ...] = STANDARD_CRFS
    optimizer: OptimizeConfig | None = None  # codec/preset/crfs are overridden per proxy
    feature_crf: int = DEFAULT_SOURCE_CRF
    proxy_height: int = PROXY_HEIGHT
    label_features: tuple[str, ...] = FEATURE_SOURCES  # recorded by S0 for training

    def __post_init__(self):
        object.__setattr__(self, "codec", Codec(self.codec))

    def optimize_config(self, codec: Codec, preset: Preset) -> OptimizeConfig:
        base = self.optimizer or OptimizeConfig()
        return replace(base, codec=codec, preset=preset, crfs=self.crfs)


@dataclass
class SystemOutcome:
    clip_id: str
    system: str
    codec: str
    status: str  # ok | fallback | skipped | failed
    k_estimated: float = 1.0
    realized_gain_percent: float = 0.0
    estimate_time_s: float = 0.0
    apply_time_s: float = 0.0
    estimate_encodes: int = 0
    iterations: int = 0
    harmful: bool = False  # the estimated k made the target worse than k = 1
    reason: str = ""
    proxy_gain_percent: float | None = None
    features: dict[str, list[float]] = field(default_factory=dict)
    trace: list = field(default_factory=list)  # proxy search: [k, BD-Rate or None, encodes]
    estimate_cached: int = field(default=0, compare=False)  # cache hits; not recorded

    def to_record(self) -> dict:
        d = asdict(self)
        d.pop("estimate_cached")
        return {"kind": "outcome", **d}

    @classmethod
    def from_record(cls, d: dict) -> "SystemOutcome":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    @property
    def key(self) -> tuple[str, str, str]:
        return self.clip_id, self.system, self.codec


def proxy_config(clip: ClipRef, system: SystemId, encoder: Encoder, config: SystemConfig,
                 stats: EncodeStats | None = None) -> ProxyConfig:
    source = system.source
    if source == "144p":
        return ProxyConfig(encoder.downscale(clip, config.proxy_height, stats), config.codec, Preset.DEFAULT)
    if source == "fast":
        return ProxyConfig(clip, config.codec, Preset.FAST)
    if source == "h264":
        return ProxyConfig(clip, Codec.H264, Preset.DEFAULT)
    return ProxyConfig(clip, config.codec, Preset.DEFAULT)


def _require(encoder: Encoder, clip: ClipRef, codec: Codec) -> None:
    if not encoder.available(clip, codec):
        raise BackendUnavailable(f"{codec.value} encoder unavailable for {clip.clip_id}")


def feature_vector(clip: ClipRef, source: str, encoder: Encoder, config: SystemConfig,
                   stats: EncodeStats | None = None):
    """Features of the k = 1 encode at ``feature_crf`` in one proxy configuration."""
    system = {"orig": SystemId.ML0, "144p": SystemId.ML1, "fast": SystemId.ML2}[source]
    return proxy_features(proxy_config(clip, system, encoder, config, stats), encoder, config, stats)


def proxy_features(proxy: ProxyConfig, encoder: Encoder, config: SystemConfig, stats: EncodeStats | None = None):
    result = encoder.encode_set(proxy.clip, proxy.codec, [config.feature_crf], 1.0, proxy.preset, stats)[0]
    return extract_features(result)


def realized_gain(clip: ClipRef, k: float, encoder: Encoder, config: SystemConfig,
                  stats: EncodeStats | None = None) -> float:
    """-BD-Rate of the target curve at ``k`` against the target's k = 1 curve."""
    baseline = curve_from_results(encoder.encode_set(clip, config.codec, config.crfs, 1.0))
    if round_k(k) == 1.0:
        encoder.encode_set(clip, config.codec, config.crfs, 1.0, Preset.DEFAULT, stats)
        return 0.0
    applied = curve_from_results(encoder.encode_set(clip, config.codec, config.crfs, k, Preset.DEFAULT, stats))
    res = bd_rate(baseline, applied)
    if not res.valid:
        raise InvalidCurveError(res.reason)
    return res.gain_percent


def run_system(
    clip: ClipRef,
    system: SystemId | str,
    encoder: Encoder,
    config: SystemConfig | None = None,
    models: dict[str, ForestModel] | None = None,
) -> SystemOutcome:
    config = config or SystemConfig()
    system = SystemId(system)
    out = SystemOutcome(clip.clip_id, system.value, config.codec.value, "ok")
    est = EncodeStats()

    def skipped(reason: str) -> SystemOutcome:
        out.status, out.reason = "skipped", reason
        return out

    # estimate phase
    try:
        _require(encoder, clip, config.codec)
        proxy = proxy_config(clip, system, encoder, config, est)
        _require(encoder, proxy.clip, proxy.codec)
        if system.is_ml:
            model = (models or {}).get(system.source)
            if model is None:
                return skipped(f"no model for {system.source} features")
            fv = proxy_features(proxy, encoder, config, est)
            k = round_k(float(predict_k(model, fv)))
            out.features = {system.source: list(fv.values)}
        else:
            opt = optimize_clip(proxy.clip, encoder, config.optimize_config(proxy.codec, proxy.preset))
            est.encode_time_s += opt.encode_time_s
            est.requests += opt.encodes
            est.cached += opt.encodes - opt.new_encodes
            out.iterations = opt.iterations
            out.trace = opt.to_record()["trace"]["evaluations"]
            if opt.status != "ok" or opt.terminated_by == "infeasible":
                out.status, out.reason = "fallback", opt.reason or "estimation infeasible"
                k = 1.0
            else:
                k = opt.k_opt
                out.proxy_gain_percent = opt.gain_percent
    except (BackendUnavailable, UnsupportedCapability) as e:
        return skipped(str(e))
    except ModelVersionMismatch as e:
        return skipped(f"model: {e}")
    except (EncodeFailure, InvalidCurveError) as e:
        log.warning("%s estimate for %s failed: %s", system.value, clip.clip_id, e)
        out.status, out.reason, k = "fallback", f"estimate: {e}", 1.0
    out.k_estimated = k
    out.estimate_time_s = est.encode_time_s + est.downscale_time_s
    out.estimate_encodes = est.requests
    out.estimate_cached = est.cached

    # apply phase
    applied = EncodeStats()
    try:
        out.realized_gain_percent = realized_gain(clip, k, encoder, config, applied)
        if system is SystemId.S0 and out.status == "ok":
            for source in config.label_features:
                out.features[source] = list(feature_vector(clip, source, encoder, config).values)
    except (BackendUnavailable, UnsupportedCapability) as e:
        return skipped(str(e))
    except (EncodeFailure, InvalidCurveError) as e:
        out.status, out.reason = "failed", f"target: {e}"
        out.realized_gain_percent = 0.0
        return out
    out.apply_time_s = applied.encode_time_s
    out.harmful = out.realized_gain_percent < 0
    return out


@dataclass(frozen=True)
class SpeedupRow:
    system: str
    clips: int
    total_estimate_s: float
    mean_estimate_s: float
    speedup: float  # S0 total estimate time / this system's
    estimate_encodes: int
    per_encode_speedup: float  # S0 mean seconds per encode / this system's


def speedup_table(outcomes: list[SystemOutcome]) -> list[SpeedupRow]:
    """Rows for every system present; S0 must be present and defines 1.0.

    Only clips on which every listed system ran (not skipped) are counted,
    so all ratios compare the same clip set.
    """
    by_system: dict[str, dict[str, SystemOutcome]] = {}
    for o in outcomes:
        by_system.setdefault(o.system, {})[o.clip_id] = o
    if "S0" not in by_system:
        raise ValueError("speedups are relative to S0, which has no outcomes")
    clip_sets = [{c for c, o in m.items() if o.status != "skipped"} for m in by_system.values()]
    common = set.intersection(*clip_sets)
    if not common:
        raise ValueError("no clip was run by every system")

    def totals(name):
        rows = [by_system[name][c] for c in sorted(common)]
        return sum(o.estimate_time_s for o in rows), sum(o.estimate_encodes for o in rows)

    s0_time, s0_enc = totals("S0")
    rows = []
    for name in sorted(by_system, key=lambda s: list(SystemId.__members__).index(s)):
        t, n = totals(name)
        if t <= 0 or n <= 0:
            raise TimingError(f"{name} has no recorded estimate time")
        rows.append(SpeedupRow(name, len(common), t, t / len(common), s0_time / t, n,
                               (s0_time / s0_enc) / (t / n)))
    return rows


def default_encoder_factory(cache: EncodeCache) -> Encoder:
    from .encoding import ExternalBackend, SynthBackend

    return Encoder(cache, synth=SynthBackend(), external=ExternalBackend())


def measure_speedup(
    clips: list[ClipRef],
    systems: list[SystemId | str],
    config: SystemConfig | None = None,
    models: dict[str, ForestModel] | None = None,
    *,
    encoder: Encoder | None = None,
    make_encoder: Callable[[EncodeCache], Encoder] = default_encoder_factory,
    allow_cached_timing: bool = False,
) -> list[SpeedupRow]:
    """Run ``systems`` serially on ``clips`` and tabulate estimate-phase time.

    Without a shared ``encoder`` each system gets ``make_encoder`` over a
    fresh scratch cache, so every timing comes from an encode run here.  With
    a shared encoder, an estimate phase served from cache raises TimingError
    unless ``allow_cached_timing``.
    """
    if not clips:
        raise ValueError("need at least one clip")
    systems = [SystemId(s) for s in systems]
    if SystemId.S0 not in systems:
        systems = [SystemId.S0, *systems]
    outcomes = []
    for system in systems:
        with tempfile.TemporaryDirectory(prefix="lt-timing-") as scratch:
            enc = encoder or make_encoder(EncodeCache(scratch))
            for clip in clips:
                o = run_system(clip, system, enc, config, models)
                if o.estimate_cached and not allow_cached_timing:
                    raise TimingError(
                        f"{system.value} on {clip.clip_id} reused {o.estimate_cached} cached encodes; "
                        "rerun with a fresh cache or allow cached timing"
                    )
                outcomes.append(o)
    return speedup_table(outcomes)
