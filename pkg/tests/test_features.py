import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lagrange_tuner.encoding import Codec, EncodeJob, EncodeResult, FrameTypeStats, SynthConfig, synthetic_clip
from lagrange_tuner.encoding.synth import synth_encode
from lagrange_tuner.features import (
    BASE_FEATURES,
    FEATURE_NAMES,
    PRODUCT_PAIRS,
    FeatureVector,
    extract_features,
    from_named,
    ordering_hash,
)

PINNED = dict(r0=1000.0, alpha=0.2, k_star=1.0, beta=0.05, d0=42.0, psnr_slope=0.5, temporal=0.5, chroma_u=2.0, chroma_v=3.0)


def pinned_result(**config):
    clip = synthetic_clip(0, 0, 1280, 720, **PINNED)
    return synth_encode(EncodeJob(clip, Codec.SYNTH, 32, 1.0), SynthConfig(**config))


def test_hand_computed_vector():
    # CRF 32: rate = 1000 * 10**-0.4, Y = 42 - 0.5 * 10 = 37
    # 150 frames -> 5 I, 73 P, 72 B; temporal 0.5 -> bits I 5.5, P 1.75, B 0.9
    # PSNR offsets I +1.1, P 0, B -1.0; count-weighted mean offset = -66.5 / 150
    rate = 398.1071705534972
    bits = 5 * 5.5 + 73 * 1.75 + 72 * 0.9
    shift = 66.5 / 150
    y = {"I": 37 + 1.1 + shift, "P": 37 + shift, "B": 37 - 1.0 + shift}
    expect = {
        "bitrate": rate,
        "psnr": (6 * 37 + 39 + 40) / 8,
        "psnr_y": 37.0,
        "psnr_u": 39.0,
        "psnr_v": 40.0,
        "I_kbps": rate * 150 * 5.5 / bits,
        "P_kbps": rate * 150 * 1.75 / bits,
        "B_kbps": rate * 150 * 0.9 / bits,
        "height": 720.0,
        "width": 1280.0,
    }
    for t in "IPB":
        expect.update({f"{t}_psnr_y": y[t], f"{t}_psnr_u": y[t] + 2, f"{t}_psnr_v": y[t] + 3})
    fv = extract_features(pinned_result()).named()
    for name, value in expect.items():
        assert fv[name] == pytest.approx(value, rel=1e-12), name
    assert fv["I_kbps*I_psnr_y"] == pytest.approx(expect["I_kbps"] * y["I"], rel=1e-12)
    assert fv["height*width"] == 921600.0
    assert fv["psnr*width"] == pytest.approx(expect["psnr"] * 1280)


def test_dimension_and_names():
    assert len(BASE_FEATURES) == 19
    assert len(PRODUCT_PAIRS) == 30
    assert len(FEATURE_NAMES) == len(set(FEATURE_NAMES)) == 49
    assert len(ordering_hash()) == 16


def test_no_b_frames_are_masked():
    fv = extract_features(pinned_result(b_frames=False))
    named = fv.named()
    assert fv.mask == ("B",)
    assert all(v == 0.0 for n, v in named.items() if "B_" in n)
    assert len(fv.values) == 49 and np.all(np.isfinite(fv.values))


def test_missing_frame_types_from_log():
    r = EncodeResult(850.0, 41.9, 41.0, 45.1, 45.8, 1280, 720, 1.0, {})
    fv = extract_features(r)
    assert fv.mask == ("I", "P", "B")
    assert fv.named()["I_kbps"] == 0.0 and fv.named()["bitrate"] == 850.0


def test_identical_results_identical_vectors():
    a, b = pinned_result(), pinned_result()
    assert extract_features(a).values == extract_features(b).values


def test_source_selection():
    results = {crf: synth_encode(EncodeJob(synthetic_clip(1, 1), Codec.SYNTH, crf), SynthConfig()) for crf in (22, 27, 32, 37, 42)}
    assert extract_features(results) == extract_features(results[32])
    assert extract_features(list(results.values())) == extract_features(results[32])
    assert extract_features(results, source_crf=22) == extract_features(results[22])
    with pytest.raises(KeyError):
        extract_features(results, source_crf=30)
    with pytest.raises(ValueError):
        extract_features([])


def test_from_named_round_trip():
    fv = extract_features(pinned_result())
    assert from_named(fv.named()).values == fv.values
    with pytest.raises(KeyError):
        from_named({"bitrate": 1.0})


def test_rejects_bad_vectors():
    with pytest.raises(ValueError):
        FeatureVector((1.0,) * 48)
    with pytest.raises(ValueError):
        FeatureVector((float("nan"),) * 49)


@given(st.floats(1.0, 1e5), st.floats(20, 60), st.floats(20, 60), st.floats(20, 60))
def test_products_follow_pairs(rate, y, u, v):
    r = EncodeResult(rate, (6 * y + u + v) / 8, y, u, v, 640, 360, 1.0, {"P": FrameTypeStats(rate, y, u, v, 150)})
    named = extract_features(r).named()
    for a, b in PRODUCT_PAIRS:
        assert named[f"{a}*{b}"] == named[a] * named[b]
