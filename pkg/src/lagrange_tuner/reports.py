"""Plot-ready report files from a results store.

Gain buckets follow the usual summary columns: "=0" holds every gain <= 0
(negative realized gains included), then > 0.1 and > 1 percentage points.
The exclusive bands =0, (0, 0.1], (0.1, 1], > 1 partition the measured
records.  Skipped and failed outcomes are counted separately and never enter
the gain statistics; fallbacks (k = 1, gain 0) do.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .errors import TimingError
from .proxy import SystemId, SystemOutcome, speedup_table

MEASURED = ("ok", "fallback")
EDGES = (0.0, 0.1, 1.0)


def _fmt(x: float, digits: int = 6) -> str:
    s = f"{x:.{digits}f}"
    return "0." + "0" * digits if s == "-0." + "0" * digits else s


def _order(systems) -> list[str]:
    names = list(SystemId.__members__)
    return sorted(systems, key=lambda s: (names.index(s) if s in names else len(names), s))


def _group(outcomes: list[SystemOutcome]) -> dict[str, list[SystemOutcome]]:
    out: dict[str, list[SystemOutcome]] = {}
    for o in sorted(outcomes, key=lambda o: o.clip_id):
        out.setdefault(o.system, []).append(o)
    return out


def cdf_points(gains: list[float]) -> list[tuple[float, float]]:
    """Empirical CDF: one point per distinct gain, (gain, fraction <= gain)."""
    xs = sorted(gains)
    n = len(xs)
    pts = []
    for i, g in enumerate(xs):
        if i + 1 < n and xs[i + 1] == g:
            continue
        pts.append((g, (i + 1) / n))
    return pts


def dominates(a: list[float], b: list[float], tol: float = 0.0) -> bool:
    """True when the gain distribution ``a`` is at least ``b`` at every quantile.

    Equivalent to a's CDF lying on or to the right of b's (within ``tol``
    percentage points), i.e. a has at least as many clips above any gain level.
    """
    if len(a) != len(b):
        raise ValueError("dominance is compared on the same clip set")
    return all(x >= y - tol for x, y in zip(sorted(a), sorted(b)))


@dataclass(frozen=True)
class GainSummary:
    system: str
    clips: int  # measured (ok + fallback)
    pct_zero: float
    pct_gt_01: float
    pct_gt_1: float
    band_zero: int
    band_0_01: int
    band_01_1: int
    band_gt_1: int
    best: float
    mean: float
    skipped: int
    failed: int
    fallback: int
    harmful: int


def summarize(system: str, outcomes: list[SystemOutcome]) -> GainSummary:
    gains = [o.realized_gain_percent for o in outcomes if o.status in MEASURED]
    n = len(gains)
    zero = sum(g <= EDGES[0] for g in gains)
    low = sum(EDGES[0] < g <= EDGES[1] for g in gains)
    mid = sum(EDGES[1] < g <= EDGES[2] for g in gains)
    high = sum(g > EDGES[2] for g in gains)
    assert zero + low + mid + high == n
    pct = (lambda c: 100.0 * c / n) if n else (lambda c: 0.0)
    return GainSummary(
        system=system,
        clips=n,
        pct_zero=pct(zero),
        pct_gt_01=pct(mid + high),
        pct_gt_1=pct(high),
        band_zero=zero,
        band_0_01=low,
        band_01_1=mid,
        band_gt_1=high,
        best=max(gains) if gains else 0.0,
        mean=sum(gains) / n if n else 0.0,
        skipped=sum(o.status == "skipped" for o in outcomes),
        failed=sum(o.status == "failed" for o in outcomes),
        fallback=sum(o.status == "fallback" for o in outcomes),
        harmful=sum(o.harmful for o in outcomes if o.status in MEASURED),
    )


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass
class ReportSet:
    files: dict[str, str]  # file name -> content
    missing: list[str]

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in sorted(self.files):
            p = out / name
            p.write_text(self.files[name])
            paths.append(p)
        return paths


def _select(outcomes, systems):
    if not outcomes:
        raise ValueError("results store has no outcomes")
    grouped = _group(outcomes)
    wanted = _order(grouped) if systems is None else [SystemId(s).value for s in systems]
    missing = [s for s in wanted if s not in grouped]
    present = [s for s in wanted if s in grouped]
    if not present:
        raise ValueError(f"none of the requested systems are in the store: {', '.join(missing)}")
    return grouped, present, missing


def cdf_report(outcomes: list[SystemOutcome], systems=None) -> ReportSet:
    grouped, present, missing = _select(outcomes, systems)
    rows = []
    for s in present:
        gains = [o.realized_gain_percent for o in grouped[s] if o.status in MEASURED]
        rows += [(s, _fmt(g), _fmt(f)) for g, f in cdf_points(gains)]
    return ReportSet({"cdf.csv": _csv(("system", "gain_percent", "cumulative_fraction"), rows)}, missing)


def summary_report(outcomes: list[SystemOutcome], systems=None) -> ReportSet:
    grouped, present, missing = _select(outcomes, systems)
    sums = [summarize(s, grouped[s]) for s in present]
    speed = {}
    if "S0" in grouped:
        try:
            speed = {r.system: r.speedup for r in speedup_table([o for s in present + ["S0"] for o in grouped[s]])}
        except (ValueError, TimingError):  # timing gaps should not block the gain table
            speed = {}
    header = ("system", "clips", "pct_zero", "pct_gt_0.1", "pct_gt_1", "n_zero", "n_0_to_0.1",
              "n_0.1_to_1", "n_gt_1", "best_gain", "mean_gain", "speedup", "skipped", "failed",
              "fallback", "harmful")
    rows = [
        (g.system, g.clips, _fmt(g.pct_zero, 1), _fmt(g.pct_gt_01, 1), _fmt(g.pct_gt_1, 1), g.band_zero,
         g.band_0_01, g.band_01_1, g.band_gt_1, _fmt(g.best, 4), _fmt(g.mean, 4),
         _fmt(speed[g.system], 2) if g.system in speed else "", g.skipped, g.failed, g.fallback, g.harmful)
        for g in sums
    ]
    lines = [f"{'system':<7}{'clips':>7}{'=0%':>9}{'>0.1%':>9}{'>1%':>9}{'best':>10}{'mean':>10}{'speedup':>9}"
             f"{'skipped':>9}{'failed':>8}"]
    for g in sums:
        sp = f"{speed[g.system]:.2f}x" if g.system in speed else "-"
        lines.append(f"{g.system:<7}{g.clips:>7}{g.pct_zero:>8.1f}%{g.pct_gt_01:>8.1f}%{g.pct_gt_1:>8.1f}%"
                     f"{g.best:>9.2f}%{g.mean:>9.2f}%{sp:>9}{g.skipped:>9}{g.failed:>8}")
    for s in missing:
        lines.append(f"{s:<7} (no records)")
    text = "\n".join(lines) + "\n"
    return ReportSet({"summary.csv": _csv(header, rows), "summary.txt": text}, missing)


def speedup_report(outcomes: list[SystemOutcome], systems=None) -> ReportSet:
    grouped, present, missing = _select(outcomes, systems)
    chosen = [o for s in set(present) | ({"S0"} & set(grouped)) for o in grouped[s]]
    rows = [
        (r.system, r.clips, _fmt(r.total_estimate_s, 3), _fmt(r.mean_estimate_s, 3), _fmt(r.speedup, 3),
         r.estimate_encodes, _fmt(r.per_encode_speedup, 3))
        for r in speedup_table(chosen)
    ]
    header = ("system", "clips", "total_estimate_s", "mean_estimate_s", "speedup", "estimate_encodes",
              "per_encode_speedup")
    return ReportSet({"speedup.csv": _csv(header, rows)}, missing)


REPORTS = {"cdf": cdf_report, "summary": summary_report, "speedup": speedup_report}


def build_reports(outcomes: list[SystemOutcome], kinds=("cdf", "summary", "speedup"), systems=None) -> ReportSet:
    """Several report kinds at once; speedup is left out when S0 never ran."""
    files, missing = {}, []
    for kind in kinds:
        if kind == "speedup" and len(kinds) > 1 and not any(o.system == "S0" for o in outcomes):
            continue
        rs = REPORTS[kind](outcomes, systems)
        files.update(rs.files)
        missing = sorted(set(missing) | set(rs.missing))
    return ReportSet(files, missing)
