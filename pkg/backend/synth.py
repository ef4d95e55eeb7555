"""
Synthetic audio for VAD training and dsp-in-the-loop simulation.

Speech-like segments are harmonic-rich voiced sounds (random pitch, two
formants, syllabic amplitude modulation); non-speech segments are white
noise, high-frequency hiss, band-limited fan noise or near-silence.
"""

import logging
import os
from typing import List, Tuple

import numpy as np
import pandas as pd
from scipy.signal import butter, sosfilt

import audio_io
from errors import SchemaError
from vad import Label

logger = logging.getLogger(__name__)

SR = 8000

_BAND_SOS = butter(4, [1000, 3500], btype='bandpass', fs=SR, output='sos')


def _set_rms(x: np.ndarray, target: float) -> np.ndarray:
    current = np.sqrt(np.mean(x ** 2))
    if current == 0:
        return x
    return x * (target / current)


def speech_like(rng: np.random.Generator, n_samples: int = SR) -> np.ndarray:
    t = np.arange(n_samples) / SR
    f0 = rng.uniform(100, 250)
    # slow pitch contour
    f0_track = f0 * (1 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0_track) / SR
    formants = (rng.uniform(400, 800), rng.uniform(1000, 2000))
    x = np.zeros(n_samples)
    for k in range(1, int(3800 // f0) + 1):
        fk = k * f0
        envelope = sum(np.exp(-0.5 * ((fk - fm) / 150.0) ** 2) for fm in formants) + 0.05
        x += (envelope / k) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    syllabic = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(3, 5) * t + rng.uniform(0, 2 * np.pi))
    x = x * syllabic
    x = _set_rms(x, rng.uniform(0.05, 0.3))
    return x + 0.01 * np.sqrt(np.mean(x ** 2)) * rng.standard_normal(n_samples)


def noise_like(rng: np.random.Generator, n_samples: int = SR) -> np.ndarray:
    kind = rng.integers(3)
    x = rng.standard_normal(n_samples)
    if kind == 1:
        x = np.diff(x, prepend=0.0)  # hiss
    elif kind == 2:
        x = sosfilt(_BAND_SOS, x)  # fan
    return _set_rms(x, rng.uniform(0.05, 0.3))


def near_silence(rng: np.random.Generator, n_samples: int = SR) -> np.ndarray:
    return 0.001 * rng.standard_normal(n_samples)


def make_corpus(n_segments: int, rng: np.random.Generator,
                speech_share: float = 0.5, silence_share: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Labeled 1-second segments
    Args:
        n_segments: Number of segments
        rng: Seeded generator
        speech_share: Fraction of speech segments
        silence_share: Fraction of near-silent segments (labeled non-speech)
    Returns:
        (segments of shape (n, 8000), labels array of Label)
    """
    n_speech = int(round(n_segments * speech_share))
    n_silence = int(round(n_segments * silence_share))
    n_noise = n_segments - n_speech - n_silence
    kinds = np.array(['speech'] * n_speech + ['noise'] * n_noise + ['silence'] * n_silence)
    rng.shuffle(kinds)
    segments = np.empty((n_segments, SR))
    labels = []
    for i, kind in enumerate(kinds):
        if kind == 'speech':
            segments[i] = speech_like(rng)
            labels.append(Label.SPEECH)
        elif kind == 'noise':
            segments[i] = noise_like(rng)
            labels.append(Label.NON_SPEECH)
        else:
            segments[i] = near_silence(rng)
            labels.append(Label.NON_SPEECH)
    return segments, np.array(labels, dtype=object)


def write_corpus(out_dir: str, segments: np.ndarray, labels: np.ndarray) -> str:
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i, (segment, label) in enumerate(zip(segments, labels)):
        name = f"seg_{i:05d}.wav"
        audio_io.write_wav(os.path.join(out_dir, name), segment)
        rows.append({'file': name, 'label': label.value})
    labels_path = os.path.join(out_dir, 'labels.csv')
    pd.DataFrame(rows, columns=['file', 'label']).to_csv(labels_path, index=False)
    logger.info(f"Wrote {len(rows)} segments to {out_dir}")
    return labels_path


def read_corpus(corpus_dir: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read labels.csv plus its WAV files; every full second of a file inherits the file label"""
    labels_path = os.path.join(corpus_dir, 'labels.csv')
    if not os.path.exists(labels_path):
        raise SchemaError(f"{labels_path} not found")
    df = pd.read_csv(labels_path, dtype=str)
    if list(df.columns) != ['file', 'label']:
        raise SchemaError(f"{labels_path}: expected header file,label")
    segments: List[np.ndarray] = []
    labels: List[Label] = []
    for row_no, row in enumerate(df.itertuples(index=False), start=2):
        try:
            label = Label(row.label)
        except ValueError:
            raise SchemaError(f"{labels_path}:{row_no}: unknown label {row.label!r}")
        samples = audio_io.load_for_vad(os.path.join(corpus_dir, row.file))
        for segment in audio_io.one_second_segments(samples):
            segments.append(segment)
            labels.append(label)
    if not segments:
        raise SchemaError(f"{corpus_dir}: corpus holds no full 1-second segment")
    return np.vstack(segments), np.array(labels, dtype=object)
