"""The eight acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; they are printed together at the end
of the pytest run.
"""

import contextlib
import json
import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest

from lagrange_tuner.encoding import EncodeCache, Encoder, SynthBackend, SynthConfig, synthetic_clip
from lagrange_tuner.encoding.synth import clip_params, synth_model
from lagrange_tuner.forest import ForestModel, TrainSet, train_forest
from lagrange_tuner.benchmarks import learnability_set
from lagrange_tuner.harness import ResultsStore
from lagrange_tuner.optimizer import OptimizeConfig, optimize_clip
from lagrange_tuner.proxy import SystemConfig, SystemOutcome, run_system
from lagrange_tuner.rd import RDCurve, bd_rate
from lagrange_tuner.reports import build_reports, dominates

from .conftest import ACCEPTANCE
from .oracles import grid_optimum, simpson_bd_rate

CRFS = (22, 27, 32, 37, 42)


@contextlib.contextmanager
def criterion(n: int, title: str):
    detail = {}
    try:
        yield detail
    except BaseException:
        ACCEPTANCE[n] = f"[FAIL] {n}. {title} {_fmt(detail)}"
        raise
    ACCEPTANCE[n] = f"[PASS] {n}. {title} {_fmt(detail)}"
    print(ACCEPTANCE[n])


def _fmt(detail: dict) -> str:
    return "(" + ", ".join(f"{k}={v}" for k, v in detail.items()) + ")" if detail else ""


def test_1_bd_rate_exactness():
    with criterion(1, "BD-Rate exactness on constant-ratio curves") as d:
        rates = np.array([4123.57, 2012.88, 1043.21, 561.94, 309.12])
        psnr = [43.912, 41.205, 38.633, 36.118, 33.870]
        ref = RDCurve.from_arrays(rates, psnr)
        worst = 0.0
        t0 = time.perf_counter()
        for c in (0.5, 0.9, 1.1, 2.0):
            got = bd_rate(ref, RDCurve.from_arrays(c * rates, psnr)).bd_rate_percent
            worst = max(worst, abs(got - (c - 1) * 100))
        d["max_err_pp"] = f"{worst:.2e}"
        d["ms"] = f"{1000 * (time.perf_counter() - t0):.2f}"
        assert worst <= 1e-9


def random_pair(rng):
    q = np.sort(rng.uniform(30, 46, 5))
    while np.min(np.diff(q)) < 0.3:
        q = np.sort(rng.uniform(30, 46, 5))
    slope = rng.uniform(0.08, 0.2)
    rates = 10 ** (rng.uniform(2.5, 3.5) + slope * (q - q[0]) + rng.normal(0, 0.01, 5))
    rates = np.sort(rates)
    q2 = np.sort(q + rng.uniform(-0.4, 0.4, 5))
    while np.min(np.diff(q2)) < 0.3:
        q2 = np.sort(q + rng.uniform(-0.4, 0.4, 5))
    rates2 = np.sort(rates * rng.uniform(0.85, 1.15, 5))
    return (rates, q), (rates2, q2)


def test_2_bd_rate_oracle_equivalence():
    with criterion(2, "BD-Rate vs 10,000-panel integration oracle, 100 pairs") as d:
        rng = np.random.default_rng(2024)
        pairs = [random_pair(rng) for _ in range(100)]
        t0 = time.perf_counter()
        ours = [bd_rate(RDCurve.from_arrays(*a), RDCurve.from_arrays(*b)) for a, b in pairs]
        elapsed = time.perf_counter() - t0
        assert all(r.valid for r in ours)
        errs = [abs(r.bd_rate_percent - simpson_bd_rate(a[0], a[1], b[0], b[1])) for r, (a, b) in zip(ours, pairs)]
        d["max_err_pp"] = f"{max(errs):.2e}"
        d["s"] = f"{elapsed:.3f}"
        assert max(errs) <= 1e-6
        assert elapsed < 1.0


def test_3_optimizer_correctness(tmp_path):
    with criterion(3, "optimizer vs 0.01-step grid oracle, 200 clips") as d:
        config = SynthConfig()
        enc = Encoder(EncodeCache(tmp_path), synth=SynthBackend(config))
        clips = [synthetic_clip(7, i) for i in range(200)]
        t0 = time.perf_counter()
        results = [optimize_clip(c, enc, OptimizeConfig(codec="synth")) for c in clips]
        elapsed = time.perf_counter() - t0
        dk, dg, its, bad = [], [], [], 0
        for clip, r in zip(clips, results):
            p = clip_params(clip.path, clip.pixels, config)
            assert 0.3 <= p.k_star <= 4.0
            k_grid, best = grid_optimum(lambda c, k: synth_model(p, c, k))
            dk.append(abs(r.k_opt - k_grid))
            dg.append(abs(r.gain_percent + best))
            its.append(r.iterations)
        d["max_dk"] = f"{max(dk):.4f}"
        d["max_dgain_pp"] = f"{max(dg):.4f}"
        d["iters_mean/max"] = f"{np.mean(its):.2f}/{max(its)}"
        d["s"] = f"{elapsed:.1f}"
        assert max(dk) <= 0.05
        assert max(dg) <= 0.05
        assert max(its) <= 25
        assert elapsed < 30


class Counting(SynthBackend):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.jobs = []

    def encode(self, job):
        self.jobs.append(job)
        return super().encode(job)


def test_4_encode_accounting(tmp_path):
    with criterion(4, "5 encodes per objective evaluation; warm rerun encodes nothing") as d:
        backend = Counting()
        enc = Encoder(EncodeCache(tmp_path), synth=backend)
        per_k_all = []
        for i in range(20):
            backend.jobs.clear()
            r = optimize_clip(synthetic_clip(12, i), enc, OptimizeConfig(codec="synth"))
            per_k = {}
            for j in backend.jobs:
                per_k.setdefault(j.k, []).append(j.crf)
            assert all(sorted(v) == list(CRFS) for v in per_k.values())
            assert set(per_k) == {e.k for e in r.trace.evaluations}
            per_k_all += [len(v) for v in per_k.values()]
        warm = Counting()
        for i in range(20):
            optimize_clip(synthetic_clip(12, i), Encoder(EncodeCache(tmp_path), synth=warm), OptimizeConfig(codec="synth"))
        d["evaluations"] = len(per_k_all)
        d["encodes_per_eval"] = sorted(set(per_k_all))
        d["warm_encodes"] = len(warm.jobs)
        assert set(per_k_all) == {5}
        assert warm.jobs == []


def _gains(tmp_path, rho, n):
    config = SynthConfig(rho={"downscale": rho, "fast": 0.97, "h264": 0.8})
    enc = Encoder(EncodeCache(tmp_path / f"rho{rho}"), synth=SynthBackend(config))
    sc = SystemConfig(label_features=())
    out = {"S0": [], "S1": []}
    for i in range(n):
        clip = synthetic_clip(7, i)
        for s in out:
            o = run_system(clip, s, enc, sc)
            assert o.status == "ok"
            out[s].append(o.realized_gain_percent)
    return out


def test_5_proxy_behavior(tmp_path):
    with criterion(5, "proxy behavior: rho=1 matches S0; rho=0.9 recovers 30-100% and is dominated") as d:
        perfect = _gains(tmp_path, 1.0, 200)
        diff = abs(np.mean(perfect["S1"]) - np.mean(perfect["S0"]))
        noisy = _gains(tmp_path, 0.9, 200)
        ratio = np.mean(noisy["S1"]) / np.mean(noisy["S0"])
        d["rho1_mean_diff_pp"] = f"{diff:.2e}"
        d["rho0.9_S1/S0"] = f"{ratio:.3f}"
        d["S0_mean"] = f"{np.mean(noisy['S0']):.3f}%"
        assert diff <= 0.05
        assert 0.3 <= ratio <= 1.0
        assert dominates(noisy["S0"], noisy["S1"])


def test_6_ml_pipeline():
    with criterion(6, "forest on the 2,000-row learnability benchmark") as d:
        X, y, _ = learnability_set(2000, noise=0.05, seed=0)
        data = TrainSet(X, y, [f"r{i}" for i in range(len(y))], ["synth"] * len(y))
        t0 = time.perf_counter()
        model = train_forest(data)
        elapsed = time.perf_counter() - t0
        again = train_forest(data)
        rng = np.random.default_rng(6)
        wild = np.concatenate([X, rng.normal(0, 1e6, X.shape), -X * 1e3])
        pred = model.predict(wild)
        d["holdout_r2"] = f"{model.metrics['holdout_r2']:.4f}"
        d["pred_range"] = f"[{pred.min():.3f}, {pred.max():.3f}]"
        d["train_s"] = f"{elapsed:.1f}"
        assert model.metrics["holdout_r2"] >= 0.85
        assert np.all((pred > 0) & (pred < 6))
        assert model.to_bytes() == again.to_bytes()
        assert ForestModel.from_bytes(model.to_bytes()).to_bytes() == model.to_bytes()
        assert elapsed < 60


def test_7_reporting(tmp_path):
    with criterion(7, "hand-countable report and byte-identical reruns") as d:
        store = ResultsStore(tmp_path / "r.jsonl")
        for clip, gain in (("a", 0.0), ("b", 0.5), ("c", 2.0)):
            store.append(SystemOutcome(clip, "S1", "hevc", "ok", realized_gain_percent=gain,
                                       estimate_time_s=1.0, estimate_encodes=5).to_record())
        first = build_reports(ResultsStore(tmp_path / "r.jsonl").outcomes()).write(tmp_path / "one")
        second = build_reports(ResultsStore(tmp_path / "r.jsonl").outcomes()).write(tmp_path / "two")
        cdf = (tmp_path / "one" / "cdf.csv").read_text().splitlines()[1:]
        summary = (tmp_path / "one" / "summary.csv").read_text().splitlines()[1].split(",")
        d["cdf"] = ";".join(cdf)
        d["buckets"] = "/".join(summary[2:5])
        assert cdf == ["S1,0.000000,0.333333", "S1,0.500000,0.666667", "S1,2.000000,1.000000"]
        assert summary[2:5] == ["33.3", "66.7", "33.3"]
        assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]


def _cli(*args, **_):
    return [sys.executable, "-m", "lagrange_tuner.cli", *args]


def test_8_resume_idempotence(tmp_path):
    with criterion(8, "interrupt-and-resume equals an uninterrupted 50-clip run") as d:
        env = dict(os.environ)
        subprocess.run(_cli("simulate-corpus", "--out", "corpus.json", "--clips", "50", "--seed", "11",
                            cwd=tmp_path, env=env), cwd=tmp_path, env=env, check=True, capture_output=True)
        run = ("run", "--systems", "S0,S1", "--manifest", "corpus.json")

        full_env = {**env, "LAGRANGE_TUNER_CACHE": str(tmp_path / "cache-full")}
        subprocess.run(_cli(*run, "--results", "full.jsonl", cwd=tmp_path, env=full_env),
                       cwd=tmp_path, env=full_env, check=True, capture_output=True)

        part_env = {**env, "LAGRANGE_TUNER_CACHE": str(tmp_path / "cache-part")}
        proc = subprocess.Popen(_cli(*run, "--results", "part.jsonl", cwd=tmp_path, env=part_env),
                                cwd=tmp_path, env=part_env, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        target = tmp_path / "part.jsonl"
        deadline = time.time() + 120
        while time.time() < deadline and proc.poll() is None:
            if target.exists() and target.read_bytes().count(b"\n") >= 30:
                break
            time.sleep(0.02)
        proc.send_signal(signal.SIGKILL)
        proc.wait()
        killed_at = target.read_bytes().count(b"\n")
        subprocess.run(_cli(*run, "--results", "part.jsonl", cwd=tmp_path, env=part_env),
                       cwd=tmp_path, env=part_env, check=True, capture_output=True)

        full = ResultsStore(tmp_path / "full.jsonl").records()
        part = ResultsStore(tmp_path / "part.jsonl").records()
        canon = lambda recs: sorted(json.dumps(r, sort_keys=True) for r in recs)  # noqa: E731
        lines = (tmp_path / "part.jsonl").read_text().splitlines()
        d["killed_after_records"] = killed_at
        d["records"] = f"{len(part)}/{len(full)}"
        assert 0 < killed_at < 100
        assert len(full) == 100
        assert canon(part) == canon(full)
        assert len(lines) == 100  # nothing was run twice
