import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcse.audio import AudioClip
from qcse.calibrator import (CalibrationResult, LineSearchParams, MixSpec, SkipItem, TargetRow,
                             build_targets, calibrate, fit_length, histogram_weights, mix_at_snr,
                             prepare_item, read_manifest, read_targets, take_segment,
                             write_manifest, write_targets)
from qcse.enhancer import SeparationResult, db_to_gain
from qcse.quality import ApsProxy
from qcse.synth import background_like, speech_like

RATE = 12000


class StubOracle:
    """q as a function of the attenuation encoded in the remix gain."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = []

    def __call__(self, y, s, b):
        # the dummy separation has zero samples; recover h from the remix gain via a marker
        h = self.h_from(y)
        self.calls.append(h)
        return self.fn(h)


def _marker_sep():
    # s_est = 0, b_est = 1  =>  remix(sep, h) is the constant g, so h is recoverable
    return SeparationResult(AudioClip(np.zeros(4), RATE), AudioClip(np.ones(4), RATE))


def _oracle(fn):
    oracle = StubOracle(fn)
    oracle.h_from = lambda y: round(-20 * np.log10(y.samples[0]), 9)
    return oracle


# --- line search -------------------------------------------------------------

def test_constant_target_stops_immediately():
    oracle = _oracle(lambda h: 80.0)
    res = calibrate(_marker_sep(), None, None, oracle)
    assert (res.h_star, res.iterations, res.accepted, res.oracle_calls) == (20.0, 0, True, 1)


def test_affine_oracle_fixed_point():
    oracle = _oracle(lambda h: 100.0 - 2.0 * h)
    res = calibrate(_marker_sep(), None, None, oracle)
    assert res.h_star == 10.0 and res.q_achieved == 80.0
    assert res.oracle_calls == len(oracle.calls) == 2 and res.iterations == 1
    assert oracle.calls == [20.0, 10.0]


def test_unreachable_target_is_discarded():
    oracle = _oracle(lambda h: 95.0)
    res = calibrate(_marker_sep(), None, None, oracle)
    assert oracle.calls == [20.0, 27.5, 35.0, 40.0, 40.0, 40.0, 40.0]
    assert res.h_star == 40.0 and res.iterations == 6 and not res.accepted


def test_low_quality_clamps_at_zero():
    res = calibrate(_marker_sep(), None, None, _oracle(lambda h: 10.0))
    assert res.h_star == 0.0 and not res.accepted


@settings(max_examples=50, deadline=None)
@given(q=st.floats(0, 100))
def test_update_direction(q):
    oracle = _oracle(lambda h: q)
    calibrate(_marker_sep(), None, None, oracle, LineSearchParams(max_iters=1))
    if abs(q - 80) >= 0.25:
        h1 = oracle.calls[1]
        assert (h1 < 20.0) if q < 80 else (h1 > 20.0)


@settings(max_examples=50, deadline=None)
@given(c=st.floats(0.2, 3.9), hstar=st.floats(2, 38))
def test_affine_contraction(c, hstar):
    a = 80.0 + c * hstar  # q(h) = a - c h crosses 80 at hstar
    oracle = _oracle(lambda h: a - c * h)
    calibrate(_marker_sep(), None, None, oracle,
              LineSearchParams(max_iters=20, stop_tol=1e-9))
    dist = [abs(h - hstar) for h in oracle.calls]
    factor = abs(1 - 0.5 * c)
    for d0, d1 in zip(dist, dist[1:]):
        assert d1 <= factor * d0 + 1e-7  # h is recovered via log10 of the gain


def test_line_search_params_validation():
    with pytest.raises(ValueError):
        LineSearchParams(step=0)
    p = LineSearchParams()
    assert (p.q_target, p.step, p.h_init, p.max_iters, p.stop_tol, p.discard_tol) == \
        (80.0, 0.5, 20.0, 6, 0.25, 1.0)


# --- mixing --------------------------------------------------------------------

def _clip(x, rate=48000):
    return AudioClip(np.asarray(x, dtype=float), rate)


@pytest.mark.parametrize("snr", [-10, 0, 5, 10, 20])
def test_mix_at_snr(snr):
    rng = np.random.default_rng(snr + 50)
    x, s, b = mix_at_snr(_clip(0.3 * rng.standard_normal(4000)),
                         _clip(0.3 * rng.standard_normal(4000)), snr)
    ratio = np.mean(s.samples ** 2) / np.mean(b.samples ** 2)
    assert abs(ratio / 10 ** (snr / 10) - 1) < 1e-6
    np.testing.assert_allclose(x.samples, s.samples + b.samples, rtol=0, atol=1e-15)
    assert np.max(np.abs(x.samples)) <= 0.99 + 1e-12


def test_mix_keeps_speech_when_no_clipping():
    s0 = 0.01 * np.sin(np.arange(1000))
    x, s, b = mix_at_snr(_clip(s0), _clip(0.01 * np.cos(np.arange(1000) * 0.3)), 0)
    np.testing.assert_array_equal(s.samples, s0)
    assert abs(np.sqrt(np.mean(s.samples ** 2)) / np.sqrt(np.mean(b.samples ** 2)) - 1) < 1e-6


def test_mix_rejects_silence():
    with pytest.raises(SkipItem):
        mix_at_snr(_clip(np.ones(100)), _clip(np.zeros(100)), 0)
    with pytest.raises(SkipItem):
        mix_at_snr(_clip(np.zeros(100)), _clip(np.ones(100)), 0)


def test_segments_and_tiling():
    clip = _clip(np.arange(10.0), 8000)
    seg = take_segment(clip, 1, seconds=4 / 8000)
    assert list(seg.samples) == [4, 5, 6, 7]
    with pytest.raises(SkipItem):
        take_segment(clip, 2, seconds=4 / 8000)  # trailing remainder is dropped
    assert list(fit_length(_clip([1.0, 2.0, 3.0]), 7, offset=1).samples) == [2, 3, 1, 2, 3, 1, 2]


# --- manifests and tables -----------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    specs = [MixSpec("a.wav", "b.wav", -10.0, 0), MixSpec("c.wav", "d.wav", 5.0, 2)]
    write_manifest(tmp_path / "m.jsonl", specs)
    assert read_manifest(tmp_path / "m.jsonl") == specs
    (tmp_path / "bad.jsonl").write_text('{"speech_path": "a"}\n')
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "bad.jsonl")


def test_item_ids():
    a = MixSpec("x/sp.wav", "y/bg.wav", 5.0, 1)
    b = MixSpec("x/sp.wav", "y/bg.wav", -10.0, 1)
    assert a.pair_id == b.pair_id and a.item_id != b.item_id
    assert MixSpec("z/sp.wav", "y/bg.wav", 5.0, 1).pair_id != a.pair_id


def test_target_table_round_trip(tmp_path):
    rows = [TargetRow(MixSpec("a.wav", "b.wav", 5.0, 0), CalibrationResult(12.5, 79.9, 3, True))]
    write_targets(tmp_path / "t.csv", rows)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == \
        "speech,background,snr_db,segment,h_star_db,q_achieved,iters"
    back = read_targets(tmp_path / "t.csv")
    assert back[0].spec == rows[0].spec
    assert back[0].result.h_star == 12.5 and back[0].result.iterations == 3


# --- build_targets ----------------------------------------------------------------------

def _loader(path):
    kind, seed = path.split(":")
    if kind == "speech":
        return AudioClip(speech_like(int(seed), 4.0), 48000)
    if kind == "silent":
        return AudioClip(np.zeros(4 * 48000), 48000)
    return AudioClip(background_like(kind, int(seed), 4.0), 48000)


def test_build_targets_empty():
    assert build_targets([], ApsProxy()) == ([], [])


def test_build_targets_skips_silent_background(caplog):
    with caplog.at_level(logging.WARNING):
        rows, skipped = build_targets([MixSpec("speech:1", "silent:0", 0.0)], ApsProxy(),
                                      loader=_loader)
    assert rows == [] and len(skipped) == 1
    assert "silent background" in skipped[0][1]
    assert "silent background" in caplog.text


def test_build_targets_rows_rescore():
    specs = [MixSpec("speech:3", "noise:4", snr) for snr in (-10, 5)] + \
        [MixSpec("speech:5", "music:6", 0)]
    oracle = ApsProxy()
    seen = []
    rows, _ = build_targets(specs, oracle, on_item=lambda it, res: seen.append((it, res)),
                            workers=2, loader=_loader)
    assert rows, "expected at least one accepted item"
    by_id = {it.spec.item_id: it for it, _ in seen}
    for row in rows:
        assert 0.0 <= row.result.h_star <= 40.0
        it = by_id[row.spec.item_id]
        y = it.sep.speech_est.samples + db_to_gain(row.result.h_star) * it.sep.background_est.samples
        q = oracle(it.x.with_samples(y), it.s, it.b)
        assert abs(q - 80.0) < 1.0
        assert q == row.result.q_achieved
    # worker count does not change the output
    rows1, _ = build_targets(specs, oracle, workers=1, loader=_loader)
    assert [(r.spec, r.result) for r in rows1] == [(r.spec, r.result) for r in rows]


def test_prepare_item_shapes():
    it = prepare_item(MixSpec("speech:2", "babble:3", 10.0), loader=_loader)
    for clip in (it.x, it.s, it.b, it.sep.speech_est, it.sep.background_est):
        assert clip.sample_rate == 12000 and len(clip) == 48000
    np.testing.assert_allclose(it.sep.speech_est.samples + it.sep.background_est.samples,
                               it.x.samples, atol=1e-12)


# --- histogram weights -----------------------------------------------------------------

def test_weights_single_bin():
    assert np.allclose(histogram_weights([10.1, 10.5, 10.9]), 1.0)


def test_weights_one_per_bin():
    assert np.allclose(histogram_weights(np.arange(20) + 0.5), 1.0)


def test_weights_75_25():
    w = histogram_weights([3.2, 3.4, 3.9, 7.5])
    # raw 1/0.75 and 1/0.25, sample mean 2
    assert w[0] == pytest.approx(2 / 3, abs=1e-12) and w[3] == pytest.approx(2.0, abs=1e-12)
    assert abs(w.mean() - 1) < 1e-9


def test_weights_errors():
    with pytest.raises(ValueError):
        histogram_weights([])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 40), min_size=1, max_size=200))
def test_weights_mean_one(targets):
    w = histogram_weights(targets)
    assert abs(w.mean() - 1) < 1e-9 and np.all(w > 0)
    # items in rarer bins never weigh less than items in denser ones
    bins = np.floor(np.asarray(targets))
    counts = {b: np.sum(bins == b) for b in set(bins)}
    order = np.argsort([counts[b] for b in bins])
    assert np.all(np.diff(w[order]) <= 1e-12)
