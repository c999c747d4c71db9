"""Command-line entry point: ``lagrange-tuner <command>``.

Exit codes: 0 success, 1 error, 2 bad usage, 3 run finished with skipped
outcomes, 4 run finished with failed outcomes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .encoding import (
    CACHE_ENV,
    Codec,
    EncodeCache,
    EncodeResult,
    Encoder,
    ExternalBackend,
    SynthBackend,
    SynthConfig,
    default_cache_root,
)
from .errors import LagrangeTunerError
from .features import FeatureVector, extract_features, from_named
from .forest import ForestConfig, ForestModel, TrainConfig, TrainSet, predict_k, train_forest
from .harness import ResultsStore, ingest_manifest, run_corpus, synthetic_manifest
from .optimizer import OptimizeConfig
from .proxy import FEATURE_SOURCES, SystemConfig, SystemId, measure_speedup, parse_systems
from .reports import REPORTS, build_reports

log = logging.getLogger("lagrange_tuner")


def _crfs(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _encoder_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("encoders")
    g.add_argument("--cache", type=Path, help=f"encode cache directory (default ${CACHE_ENV} or ~/.cache)")
    g.add_argument("--workers", type=int, default=1, help="clips processed in parallel")
    g.add_argument("--x265", default="x265")
    g.add_argument("--x264", default="x264")
    g.add_argument("--vpxenc", default="vpxenc")
    g.add_argument("--ffmpeg", default="ffmpeg")


def _external(args) -> ExternalBackend:
    return ExternalBackend(
        binaries={Codec.HEVC: args.x265, Codec.H264: args.x264, Codec.VP9: args.vpxenc},
        ffmpeg=args.ffmpeg,
    )


def _cache(args) -> EncodeCache:
    return EncodeCache(args.cache or default_cache_root())


def _load_models(specs: list[str]) -> dict[str, ForestModel]:
    """``PATH`` (source read from the model) or ``SOURCE=PATH``."""
    models = {}
    for spec in specs or []:
        source, sep, path = spec.partition("=")
        if not sep:
            source, path = "", spec
        model = ForestModel.load(path)
        source = source or model.metrics.get("source", "")
        if source not in FEATURE_SOURCES:
            raise LagrangeTunerError(f"{path}: unknown feature source {source!r}; use SOURCE=PATH")
        models[source] = model
    return models


# commands


def cmd_ingest(args) -> int:
    m = ingest_manifest(args.manifest)
    print(f"{len(m.entries)} entries, {len(m.runnable)} runnable, {len(m.warnings)} warnings")
    for w in m.warnings:
        print(f"  warning: {w}")
    return 0 if m.runnable else 1


def cmd_simulate_corpus(args) -> int:
    config = SynthConfig(rho={"downscale": args.rho_downscale, "fast": args.rho_fast, "h264": args.rho_h264})
    m = synthetic_manifest(args.clips, args.seed, config, args.width, args.height, args.frames)
    m.save(args.out)
    print(f"wrote {args.clips} synthetic clips to {args.out}")
    return 0


def _system_config(args) -> SystemConfig:
    opt = OptimizeConfig(rel_tol=args.rel_tol, max_iter=args.max_iter)
    label = tuple(s for s in args.label_features.split(",") if s) if args.label_features else ()
    return SystemConfig(codec=args.codec, crfs=args.crfs, optimizer=opt, feature_crf=args.feature_crf,
                        label_features=label)


def cmd_run(args) -> int:
    manifest = ingest_manifest(args.manifest)
    systems = parse_systems(args.systems)
    if args.ground_truth and SystemId.S0 not in systems:
        systems = [SystemId.S0, *systems] if args.s0_first else [*systems, SystemId.S0]
    models = _load_models(args.model)
    config = _system_config(args)
    synth_cfg = manifest.synth_config()
    external = _external(args)

    if args.timing:
        rows = measure_speedup(
            [e.clip() for e in manifest.runnable], systems, config, models,
            make_encoder=lambda cache: Encoder(cache, synth=SynthBackend(synth_cfg), external=external),
            allow_cached_timing=args.allow_cached_timing,
        )
        print(f"{'system':<7}{'clips':>6}{'estimate s':>14}{'speedup':>10}{'per-encode':>12}")
        for r in rows:
            print(f"{r.system:<7}{r.clips:>6}{r.total_estimate_s:>14.3f}{r.speedup:>9.2f}x{r.per_encode_speedup:>11.2f}x")
        return 0

    encoder = Encoder(_cache(args), synth=SynthBackend(synth_cfg), external=external)
    store = ResultsStore(args.results)
    summary = run_corpus(manifest, systems, encoder, store, config, models, args.workers, args.force)
    states = ", ".join(f"{k} {v}" for k, v in sorted(summary.status.items())) or "nothing new"
    print(f"ran {summary.executed} (clip, system) pairs: {states}; {summary.already_done} already in {args.results}")
    for f in summary.failures + summary.errors:
        print(f"  failed: {f}")
    return summary.exit_code


def cmd_report(args) -> int:
    store = ResultsStore(args.results)
    outcomes = store.outcomes(codec=args.codec)
    kinds = list(REPORTS) if args.kind == "all" else [args.kind]
    systems = parse_systems(args.systems) if args.systems else None
    rs = build_reports(outcomes, kinds, systems)
    for p in rs.write(args.out):
        print(p)
    for s in rs.missing:
        print(f"  missing: {s} has no records")
    if "summary.txt" in rs.files:
        sys.stdout.write(rs.files["summary.txt"])
    return 0


def cmd_train(args) -> int:
    store = ResultsStore(args.labels)
    rows = [o for o in store.outcomes(["S0"], args.codec) if o.status == "ok" and args.source in o.features]
    if not rows:
        raise LagrangeTunerError(f"no S0 outcomes with {args.source} features in {args.labels}")
    data = TrainSet(
        np.array([o.features[args.source] for o in rows]),
        np.array([o.k_estimated for o in rows]),
        [o.clip_id for o in rows],
        [o.codec for o in rows],
    )
    forest = ForestConfig(n_trees=args.trees, seed=args.seed, n_jobs=args.jobs)
    grid = TrainConfig.product_grid(max_features=args.max_features, min_leaf=args.min_leaf)
    model = train_forest(data, TrainConfig(forest=forest, folds=args.folds, grid=grid, seed=args.seed))
    model.metrics.update(source=args.source, codec=args.codec or "any")
    model.save(args.out)
    m = model.metrics
    print(f"trained on {m['n_train']} rows ({m['n_holdout']} held out); cv r2 "
          f"{model.cv_score if model.cv_score is None else round(model.cv_score, 4)}; "
          f"holdout r2 {m.get('holdout_r2', float('nan')):.4f}; wrote {args.out}")
    return 0


def _read_features(path) -> FeatureVector:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, list):
        return FeatureVector(tuple(float(x) for x in doc))
    if "values" in doc:
        return FeatureVector(tuple(float(x) for x in doc["values"]))
    if "bitrate_kbps" in doc:
        return extract_features(EncodeResult.from_dict(doc))
    return from_named(doc)


def cmd_predict(args) -> int:
    model = ForestModel.load(args.model)
    k = predict_k(model, _read_features(args.features))
    print(f"{k:.3f}")
    return 0


def cmd_cache_gc(args) -> int:
    cache = _cache(args)
    older = None if args.older_than_days is None else args.older_than_days * 86400.0
    print(f"removed {cache.gc(older)} files from {cache.root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lagrange-tuner", description="Per-clip Lagrange multiplier tuning.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a manifest")
    s.add_argument("manifest", type=Path)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("simulate-corpus", help="write a synthetic-clip manifest")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--clips", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=1280)
    s.add_argument("--height", type=int, default=720)
    s.add_argument("--frames", type=int, default=150)
    s.add_argument("--rho-downscale", type=float, default=0.9)
    s.add_argument("--rho-fast", type=float, default=0.97)
    s.add_argument("--rho-h264", type=float, default=0.8)
    s.set_defaults(func=cmd_simulate_corpus)

    s = sub.add_parser("run", help="run systems over a manifest")
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--systems", default="S0", help="comma list of S0-S3, ML0-ML2")
    s.add_argument("--codec", choices=[c.value for c in Codec], default="hevc")
    s.add_argument("--results", type=Path, default=Path("results.jsonl"))
    s.add_argument("--model", action="append", help="forest model, PATH or SOURCE=PATH (repeatable)")
    s.add_argument("--force", action="store_true", help="re-run pairs already in the results file")
    s.add_argument("--ground-truth", action="store_true", help="also run S0")
    s.add_argument("--s0-first", action="store_true", help="with --ground-truth, run S0 before the others")
    s.add_argument("--crfs", type=_crfs, default=(22, 27, 32, 37, 42))
    s.add_argument("--feature-crf", type=int, default=32)
    s.add_argument("--label-features", default=",".join(FEATURE_SOURCES),
                   help="feature sources recorded with S0 outcomes for training ('' for none)")
    s.add_argument("--rel-tol", type=float, default=5e-4)
    s.add_argument("--max-iter", type=int, default=30)
    s.add_argument("--timing", action="store_true", help="serial timing run with fresh caches; prints speedups")
    s.add_argument("--allow-cached-timing", action="store_true")
    _encoder_args(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="write cdf/summary/speedup reports")
    s.add_argument("--results", type=Path, default=Path("results.jsonl"))
    s.add_argument("--kind", choices=[*REPORTS, "all"], default="all")
    s.add_argument("--out", type=Path, default=Path("reports"))
    s.add_argument("--systems")
    s.add_argument("--codec")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("train", help="train a forest on S0 labels")
    s.add_argument("--labels", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--source", choices=FEATURE_SOURCES, default="144p")
    s.add_argument("--codec")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trees", type=int, default=100)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--max-features", type=int, nargs="+", default=[7, 16, 49])
    s.add_argument("--min-leaf", type=int, nargs="+", default=[5])
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict k from a feature file")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--features", type=Path, required=True,
                   help="JSON: encode result, named base features, or a 49-value list")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("cache", help="encode cache maintenance")
    cache_sub = s.add_subparsers(dest="cache_command", required=True)
    g = cache_sub.add_parser("gc", help="remove temporaries and old records")
    g.add_argument("--cache", type=Path)
    g.add_argument("--older-than-days", type=float)
    g.set_defaults(func=cmd_cache_gc)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LagrangeTunerError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
