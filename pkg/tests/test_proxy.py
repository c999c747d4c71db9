import json

import pytest

from lagrange_tuner.encoding import Codec, EncodeCache, Encoder, Preset, SynthBackend, SynthConfig, synthetic_clip
from lagrange_tuner.encoding.synth import clip_params, synth_model
from lagrange_tuner.errors import EncodeFailure, TimingError
from lagrange_tuner.forest import ForestModel, leaf_tree
from lagrange_tuner.proxy import (
    SystemConfig,
    SystemId,
    SystemOutcome,
    measure_speedup,
    parse_systems,
    realized_gain,
    run_system,
    speedup_table,
)

from .oracles import grid_optimum

TOL = 0.05
PERFECT = SynthConfig(rho={"downscale": 1.0, "fast": 1.0, "h264": 1.0})
SC = SystemConfig(label_features=())


def make(tmp_path, config=None, **kw):
    return Encoder(EncodeCache(tmp_path), synth=SynthBackend(config or SynthConfig(), **kw))


def test_s0_matches_grid_oracle(tmp_path):
    enc = make(tmp_path)
    for i in range(5):
        clip = synthetic_clip(4, i)
        o = run_system(clip, "S0", enc, SC)
        p = clip_params(clip.path, clip.pixels, SynthConfig())
        _, best = grid_optimum(lambda c, k: synth_model(p, c, k))
        assert o.status == "ok"
        assert abs(o.realized_gain_percent + best) <= TOL


def test_perfect_proxies_match_s0(tmp_path):
    enc = make(tmp_path, PERFECT)
    for i in range(5):
        clip = synthetic_clip(4, i)
        s0 = run_system(clip, "S0", enc, SC).realized_gain_percent
        for s in ("S1", "S2", "S3"):
            assert run_system(clip, s, enc, SC).realized_gain_percent == pytest.approx(s0, abs=TOL)


def test_s0_is_never_beaten(tmp_path):
    enc = make(tmp_path)
    model = {src: ForestModel([leaf_tree(1.4)]) for src in ("orig", "144p", "fast")}
    for i in range(8):
        clip = synthetic_clip(9, i)
        s0 = run_system(clip, "S0", enc, SC).realized_gain_percent
        for s in ("S1", "S2", "S3", "ML0", "ML1", "ML2"):
            assert run_system(clip, s, enc, SC, model).realized_gain_percent <= s0 + TOL


def test_gain_is_measured_on_target(tmp_path):
    enc = make(tmp_path)
    clip = synthetic_clip(4, 7)
    o = run_system(clip, "ML1", enc, SC, {"144p": ForestModel([leaf_tree(1.7)])})
    assert o.status == "ok" and o.k_estimated == 1.7
    assert o.realized_gain_percent == pytest.approx(realized_gain(clip, 1.7, enc, SC), abs=1e-12)
    p = clip_params(clip.path, clip.pixels, SynthConfig())
    # constant rate ratio across CRFs, so the BD-Rate is that ratio exactly
    ratio = synth_model(p, 32, 1.7)[0] / synth_model(p, 32, 1.0)[0]
    assert o.realized_gain_percent == pytest.approx(-(ratio - 1) * 100, abs=1e-9)
    assert o.harmful == (o.realized_gain_percent < 0)
    assert o.estimate_encodes == 1 and len(o.features["144p"]) == 49


def test_missing_backend_is_skipped_not_zero(tmp_path):
    enc = make(tmp_path, codecs=[Codec.HEVC])
    o = run_system(synthetic_clip(0, 0), "S3", enc, SC)
    assert o.status == "skipped" and "h264" in o.reason
    o = run_system(synthetic_clip(0, 0), "ML2", enc, SC)
    assert o.status == "skipped" and "model" in o.reason


def test_model_version_mismatch_skips(tmp_path):
    stale = ForestModel([leaf_tree(1.2)], feature_hash="deadbeef")
    o = run_system(synthetic_clip(0, 0), "ML0", make(tmp_path), SC, {"orig": stale})
    assert o.status == "skipped" and "model" in o.reason


def test_proxy_failure_falls_back(tmp_path):
    class NoFast(SynthBackend):
        def encode(self, job):
            if job.preset is Preset.FAST:
                raise EncodeFailure("fast preset crashed")
            return super().encode(job)

    enc = Encoder(EncodeCache(tmp_path), synth=NoFast())
    o = run_system(synthetic_clip(0, 1), "S2", enc, SC)
    assert (o.status, o.k_estimated, o.realized_gain_percent) == ("fallback", 1.0, 0.0)


def test_target_failure_is_failed(tmp_path):
    class NoTarget(SynthBackend):
        def encode(self, job):
            if "#down" not in job.clip.path:
                raise EncodeFailure("target crashed")
            return super().encode(job)

    o = run_system(synthetic_clip(0, 1), "S1", Encoder(EncodeCache(tmp_path), synth=NoTarget()), SC)
    assert o.status == "failed" and "target" in o.reason


def test_s0_records_label_features(tmp_path):
    o = run_system(synthetic_clip(0, 2), "S0", make(tmp_path), SystemConfig())
    assert sorted(o.features) == ["144p", "fast", "orig"]
    assert o.features["144p"][17] == 144.0 and o.features["orig"][17] == 720.0


def test_record_round_trip(tmp_path):
    o = run_system(synthetic_clip(0, 3), "S1", make(tmp_path), SC)
    rec = json.loads(json.dumps(o.to_record(), allow_nan=False))
    assert rec["kind"] == "outcome" and "estimate_cached" not in rec
    assert SystemOutcome.from_record(rec) == o


def test_estimate_time_ratio_is_pixel_ratio():
    rows = measure_speedup(
        [synthetic_clip(1, i) for i in range(3)],
        ["S1"],
        make_encoder=lambda cache: Encoder(cache, synth=SynthBackend(PERFECT)),
    )
    by = {r.system: r for r in rows}
    assert by["S0"].speedup == 1.0
    assert by["S1"].speedup == pytest.approx(1280 * 720 / (256 * 144), rel=1e-12)


def test_cached_timing_refused(tmp_path):
    enc = make(tmp_path)
    clips = [synthetic_clip(1, 0)]
    measure_speedup(clips, ["S0"], encoder=enc)
    with pytest.raises(TimingError):
        measure_speedup(clips, ["S0"], encoder=enc)
    rows = measure_speedup(clips, ["S0"], encoder=enc, allow_cached_timing=True)
    assert rows[0].speedup == 1.0


def test_speedup_table_requires_s0():
    o = SystemOutcome("c", "S1", "hevc", "ok", estimate_time_s=1.0, estimate_encodes=5)
    with pytest.raises(ValueError):
        speedup_table([o])


def test_parse_systems():
    assert parse_systems("s1, ML2") == [SystemId.S1, SystemId.ML2]
    with pytest.raises(ValueError):
        parse_systems("S9")
