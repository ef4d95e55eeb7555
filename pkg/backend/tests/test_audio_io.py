import numpy as np
import pytest
import soundfile as sf

import audio_io
import synth
from errors import AudioFormatError, SchemaError
from vad import Label


def test_write_then_load_keeps_16_bit_precision(tmp_path):
    path = str(tmp_path / 'tone.wav')
    t = np.arange(8000) / 8000
    x = 0.5 * np.sin(2 * np.pi * 440 * t)
    audio_io.write_wav(path, x)
    clip = audio_io.load_wav(path)
    assert clip.sr == 8000
    assert clip.samples == pytest.approx(x, abs=2 / 32768)


def test_load_rejects_stereo(tmp_path):
    path = str(tmp_path / 'stereo.wav')
    sf.write(path, np.zeros((800, 2)), 8000, subtype='PCM_16')
    with pytest.raises(AudioFormatError, match='mono'):
        audio_io.load_wav(path)


def test_load_rejects_float_wav(tmp_path):
    path = str(tmp_path / 'float.wav')
    sf.write(path, np.zeros(800), 8000, subtype='FLOAT')
    with pytest.raises(AudioFormatError, match='16-bit'):
        audio_io.load_wav(path)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / 'noise.wav'
    path.write_bytes(b'not a wav file at all')
    with pytest.raises(AudioFormatError):
        audio_io.load_wav(str(path))


def test_resample_cd_rate_to_vad_rate():
    sr = 44100
    t = np.arange(sr) / sr
    tone = np.sin(2 * np.pi * 300 * t)
    out = audio_io.resample(tone, sr)
    assert out.size == 8000
    # a 300 Hz tone survives the anti-alias filter
    expected = np.sin(2 * np.pi * 300 * np.arange(8000) / 8000)
    assert out[200:-200] == pytest.approx(expected[200:-200], abs=0.02)


def test_resample_same_rate_is_identity():
    x = np.arange(10, dtype=float)
    assert np.array_equal(audio_io.resample(x, 8000, 8000), x)


def test_load_for_vad_resamples(tmp_path):
    path = str(tmp_path / 'cd.wav')
    audio_io.write_wav(path, np.zeros(44100 * 2), sr=44100)
    assert audio_io.load_for_vad(path).size == 16000


def test_one_second_segments_drop_partial_tail():
    segments = list(audio_io.one_second_segments(np.zeros(8000 * 3 + 500)))
    assert len(segments) == 3
    assert all(s.size == 8000 for s in segments)
    assert list(audio_io.one_second_segments(np.zeros(7999))) == []


def test_corpus_roundtrip(tmp_path):
    segments, labels = synth.make_corpus(10, np.random.default_rng(0))
    synth.write_corpus(str(tmp_path), segments, labels)
    loaded, loaded_labels = synth.read_corpus(str(tmp_path))
    assert list(loaded_labels) == list(labels)
    assert loaded == pytest.approx(np.clip(segments, -1, 1), abs=2 / 32768)


def test_corpus_shares():
    _, labels = synth.make_corpus(100, np.random.default_rng(1), speech_share=0.3)
    assert sum(1 for label in labels if label is Label.SPEECH) == 30


def test_read_corpus_errors(tmp_path):
    with pytest.raises(SchemaError, match='not found'):
        synth.read_corpus(str(tmp_path))
    (tmp_path / 'labels.csv').write_text('file,label\nx.wav,music\n')
    with pytest.raises(SchemaError, match='unknown label'):
        synth.read_corpus(str(tmp_path))
    (tmp_path / 'labels.csv').write_text('name,kind\n')
    with pytest.raises(SchemaError, match='header'):
        synth.read_corpus(str(tmp_path))
