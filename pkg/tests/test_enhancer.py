import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcse.audio import AudioClip, AudioError
from qcse.enhancer import (SEPARATOR_RATE, SeparationResult, SeparatorConfig, SpectralSeparator,
                           check_attenuation, db_to_gain, gain_to_db, remix, separate,
                           spectral_gains)
from qcse.synth import speech_like

RATE = SEPARATOR_RATE


@pytest.fixture(scope="module")
def clean_speech():
    return [AudioClip(speech_like(100 + i, 4.0, RATE), RATE) for i in range(5)]


def _noise_clip(seed=0, n=4 * RATE, scale=0.1):
    return AudioClip(scale * np.random.default_rng(seed).standard_normal(n), RATE)


def test_reconstruction_is_exact(clean_speech):
    x = AudioClip(clean_speech[0].samples + _noise_clip(1).samples, RATE)
    sep = separate(x)
    assert len(sep.speech_est) == len(x) == len(sep.background_est)
    assert np.max(np.abs(sep.speech_est.samples + sep.background_est.samples - x.samples)) < 1e-9


def test_clean_speech_leaves_little_background(clean_speech):
    ratios = [separate(x).background_est.energy() / x.energy() for x in clean_speech]
    assert max(ratios) < 0.15


def test_white_noise_is_suppressed():
    cfg = SeparatorConfig()
    for seed in range(3):
        x = _noise_clip(seed)
        ratio = separate(x, cfg).speech_est.energy() / x.energy()
        assert ratio <= cfg.noise_floor_gain ** 2 + 0.05


def test_too_short_input():
    with pytest.raises(AudioError):
        separate(AudioClip(np.zeros(100), RATE))


def test_zero_input():
    sep = separate(AudioClip(np.zeros(RATE), RATE))
    assert not sep.speech_est.samples.any()


def test_separator_config_validation():
    with pytest.raises(ValueError):
        SeparatorConfig(noise_floor_gain=0.0)
    with pytest.raises(ValueError):
        SeparatorConfig(smoothing_attack=-1)
    with pytest.raises(ValueError):
        SeparatorConfig(noise_update_rate=1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), floor=st.floats(0.01, 1.0), over=st.floats(0.5, 3.0))
def test_gains_within_bounds(seed, floor, over):
    rng = np.random.default_rng(seed)
    power = rng.exponential(size=(40, 17)) * rng.uniform(0, 10, size=(40, 1))
    cfg = SeparatorConfig(noise_floor_gain=floor, oversubtraction=over)
    g = spectral_gains(power, cfg, frame_rate=93.75)
    assert np.all(g >= floor - 1e-12) and np.all(g <= 1.0 + 1e-12)


def test_speech_estimate_energy_bounded():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = AudioClip(rng.standard_normal(RATE) * np.repeat(rng.uniform(0, 1, 48), RATE // 48), RATE)
        assert np.linalg.norm(separate(x).speech_est.samples) <= np.linalg.norm(x.samples) * (1 + 1e-6)


def test_attenuation_conversions():
    assert db_to_gain(0) == 1.0
    assert db_to_gain(20) == pytest.approx(0.1, rel=1e-15)
    assert db_to_gain(40) == pytest.approx(0.01, rel=1e-15)
    assert gain_to_db(0.01) == pytest.approx(40.0)
    for bad in (-0.1, 40.01, float("nan")):
        with pytest.raises(ValueError):
            check_attenuation(bad)


def _toy_sep(seed=0, n=500):
    rng = np.random.default_rng(seed)
    s, b = rng.standard_normal(n), rng.standard_normal(n)
    return SeparationResult(AudioClip(s, RATE), AudioClip(b, RATE))


def test_remix_identities():
    sep = _toy_sep()
    np.testing.assert_array_equal(remix(sep, 0).samples, sep.mixture.samples)
    np.testing.assert_allclose(remix(sep, 20).samples,
                               sep.speech_est.samples + 0.1 * sep.background_est.samples,
                               rtol=0, atol=1e-15)
    np.testing.assert_allclose(remix(sep, 40).samples - sep.speech_est.samples,
                               0.01 * sep.background_est.samples, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        remix(sep, 41)


@settings(max_examples=40, deadline=None)
@given(h=st.floats(0, 40))
def test_remix_linear_in_gain(h):
    sep = _toy_sep(3)
    diff = remix(sep, h).samples - sep.speech_est.samples
    np.testing.assert_allclose(diff, db_to_gain(h) * sep.background_est.samples, rtol=1e-12,
                               atol=1e-15)


def test_estimator_wrapper(clean_speech):
    est = SpectralSeparator(noise_floor_gain=0.2)
    assert est.get_params()["noise_floor_gain"] == 0.2
    assert est.config == SeparatorConfig(noise_floor_gain=0.2)
    x = clean_speech[1]
    single = est.fit().transform(x)
    batch = est.transform([x, x])
    assert len(batch) == 2
    np.testing.assert_array_equal(single.speech_est.samples, batch[1].speech_est.samples)
    ref = separate(x, SeparatorConfig(noise_floor_gain=0.2))
    np.testing.assert_array_equal(single.speech_est.samples, ref.speech_est.samples)
    assert SpectralSeparator.from_config(est.config).get_params() == est.get_params()
