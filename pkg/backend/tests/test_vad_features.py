import numpy as np
import pytest

import vad
from errors import DomainError
from reference_mfcc import reference_mfcc


def test_rms_examples():
    assert vad.rms(np.zeros(200)) == 0.0
    assert vad.rms(np.full(200, 0.5)) == pytest.approx(0.5)
    t = np.arange(200) / 200
    assert vad.rms(0.8 * np.sin(2 * np.pi * 5 * t)) == pytest.approx(0.8 / np.sqrt(2), abs=1e-3)


def test_rms_scales_with_gain():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.uniform(-0.5, 0.5, 200)
        g = rng.uniform(0.1, 2.0)
        assert vad.rms(g * x) == pytest.approx(g * vad.rms(x), abs=1e-9)


def test_zero_frame_gives_zero_features():
    features = vad.extract_mfcc(np.zeros(200))
    assert features.shape == (12,)
    assert features == pytest.approx(np.zeros(12), abs=1e-9)


def test_mfcc_gain_invariance():
    """Coefficients 2-13 ignore a gain change; only c0 would move"""
    rng = np.random.default_rng(2)
    for _ in range(1000):
        x = rng.uniform(-0.25, 0.25, 200)
        g = rng.uniform(0.25, 4.0)
        assert vad.extract_mfcc(g * x) == pytest.approx(vad.extract_mfcc(x), abs=1e-6)


def test_mfcc_matches_loop_reference():
    rng = np.random.default_rng(3)
    for _ in range(100):
        frame = rng.uniform(-1.0, 1.0, 200)
        assert vad.extract_mfcc(frame) == pytest.approx(np.array(reference_mfcc(list(frame))), abs=1e-6)


def test_batch_extraction_matches_single_frames():
    rng = np.random.default_rng(4)
    frames = rng.uniform(-1.0, 1.0, (8, 200))
    batch = vad.get_extractor(vad.DspConfig()).extract_batch(frames)
    for frame, row in zip(frames, batch):
        assert row == pytest.approx(vad.extract_mfcc(frame), abs=1e-12)


@pytest.mark.parametrize('frame', [np.zeros(199), np.zeros(201), np.zeros((2, 100))])
def test_frame_length_is_checked(frame):
    with pytest.raises(DomainError):
        vad.extract_mfcc(frame)


def test_non_finite_frame_rejected():
    frame = np.zeros(200)
    frame[10] = np.nan
    with pytest.raises(DomainError):
        vad.extract_mfcc(frame)


def test_filterbank_shape_and_coverage():
    fb = vad.mel_filterbank(vad.DspConfig())
    assert fb.shape == (26, 129)
    assert np.all(fb >= 0)
    assert np.all(fb.max(axis=1) > 0)
    assert np.all(fb <= 1.0)
