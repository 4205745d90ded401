import json

import numpy as np
import pytest

from qcse.audio import load_wav
from qcse.synth import BACKGROUND_KINDS, background_like, speech_like, write_corpus, write_manifest


def test_deterministic_and_bounded():
    a, b = speech_like(3, 1.0), speech_like(3, 1.0)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (48000,) and np.max(np.abs(a)) <= 1.0
    assert not np.array_equal(a, speech_like(4, 1.0))


@pytest.mark.parametrize("kind", BACKGROUND_KINDS)
def test_backgrounds(kind):
    x = background_like(kind, 1, 2.0)
    assert x.shape == (96000,) and np.isfinite(x).all()
    assert np.max(np.abs(x)) == pytest.approx(0.5)
    np.testing.assert_array_equal(x, background_like(kind, 1, 2.0))


def test_unknown_kind():
    with pytest.raises(ValueError):
        background_like("rain", 0, 1.0)


def test_corpus_and_manifest(tmp_path):
    paths = write_corpus(tmp_path / "c", 2, 4, duration=1.0)
    assert len(paths["speech"]) == 2 and len(paths["background"]) == 4
    assert {p.split("_")[-2] for p in paths["background"]} == set(BACKGROUND_KINDS)
    clip = load_wav(paths["speech"][0])
    assert clip.sample_rate == 48000 and len(clip) == 48000
    n = write_manifest(tmp_path / "m.jsonl", zip(paths["speech"], paths["background"]),
                       snrs=(0, 5), segments=(0, 1))
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    assert n == len(lines) == 8
    assert json.loads(lines[0]) == {"speech_path": paths["speech"][0],
                                    "background_path": paths["background"][0],
                                    "snr_db": 0, "segment_index": 0}
