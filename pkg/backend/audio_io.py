"""WAV ingestion for the VAD path: 16-bit PCM mono, resampled to 8 kHz."""

import logging
from dataclasses import dataclass
from math import gcd
from typing import Iterator

import numpy as np
import soundfile as sf
from scipy.signal import resample_poly

from errors import AudioFormatError

logger = logging.getLogger(__name__)

VAD_SAMPLE_RATE = 8000


@dataclass
class AudioClip:
    samples: np.ndarray  # float64 mono in [-1, 1]
    sr: int


def load_wav(path: str) -> AudioClip:
    """Load a mono 16-bit PCM WAV file"""
    try:
        info = sf.info(path)
        x, sr = sf.read(path, dtype='float64', always_2d=False)
    except RuntimeError as e:
        raise AudioFormatError(f"{path}: unreadable WAV ({e})")
    if info.format != 'WAV' or info.subtype != 'PCM_16':
        raise AudioFormatError(f"{path}: expected 16-bit PCM WAV, got {info.format}/{info.subtype}")
    if x.ndim > 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {x.shape[1]} channels")
    return AudioClip(samples=x, sr=int(sr))


def resample(audio: np.ndarray, orig_sr: int, target_sr: int = VAD_SAMPLE_RATE) -> np.ndarray:
    """Polyphase resampling (44.1 kHz -> 8 kHz is up 80, down 441)"""
    if orig_sr == target_sr:
        return np.asarray(audio, dtype=float)
    g = gcd(orig_sr, target_sr)
    return resample_poly(np.asarray(audio, dtype=float), target_sr // g, orig_sr // g)


def load_for_vad(path: str) -> np.ndarray:
    clip = load_wav(path)
    if clip.sr != VAD_SAMPLE_RATE:
        logger.debug(f"Resampling {path} from {clip.sr} Hz to {VAD_SAMPLE_RATE} Hz")
    return resample(clip.samples, clip.sr, VAD_SAMPLE_RATE)


def one_second_segments(samples: np.ndarray, sr: int = VAD_SAMPLE_RATE) -> Iterator[np.ndarray]:
    """Consecutive full 1-second segments; a trailing partial second is dropped"""
    for start in range(0, len(samples) - sr + 1, sr):
        yield samples[start:start + sr]


def write_wav(path: str, samples: np.ndarray, sr: int = VAD_SAMPLE_RATE) -> None:
    sf.write(path, np.clip(samples, -1.0, 1.0), sr, subtype='PCM_16', format='WAV')
