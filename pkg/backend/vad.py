"""
Two-stage voice activity detection.

Stage one is an RMS no-silence gate over 1-second segments; stage two
extracts 12 MFCCs (coefficients 2-13) per 25 ms frame and classifies them
with a linear SVM. A second is Speech when enough of its 40 frames are.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from marshmallow import Schema, ValidationError, fields, post_load, validate
from scipy.fft import dct
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import GridSearchCV, StratifiedKFold

from errors import DomainError, SchemaError, TrainingError, UndefinedMetricError

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
N_COEFFS = 12


class Label(Enum):
    SPEECH = 'speech'
    NON_SPEECH = 'non_speech'


class SegmentDecision(Enum):
    SILENCE = 'Silence'
    SPEECH = 'Speech'
    NON_SPEECH = 'NonSpeech'


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 8000
    frame_length: int = 200
    fft_length: int = 256
    n_filters: int = 26
    log_floor: float = 1e-10
    fmin: float = 0.0
    fmax: float = 4000.0

    @classmethod
    def from_config(cls, config) -> 'DspConfig':
        return cls(config.SAMPLE_RATE, config.FRAME_LENGTH, config.FFT_LENGTH,
                   config.MEL_FILTERS, config.LOG_FLOOR, 0.0, config.SAMPLE_RATE / 2.0)

    @property
    def frames_per_second(self) -> int:
        return self.sample_rate // self.frame_length


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(dsp: DspConfig) -> np.ndarray:
    """Triangular filters on the mel scale, shape (n_filters, fft_length // 2 + 1)"""
    edges = mel_to_hz(np.linspace(hz_to_mel(dsp.fmin), hz_to_mel(dsp.fmax), dsp.n_filters + 2))
    bin_freqs = np.arange(dsp.fft_length // 2 + 1) * dsp.sample_rate / dsp.fft_length
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


class MfccExtractor:
    """Precomputed window and filterbank for one DspConfig"""

    def __init__(self, dsp: DspConfig):
        self.dsp = dsp
        self.window = np.hamming(dsp.frame_length)
        self.filterbank = mel_filterbank(dsp)

    def extract_batch(self, frames: np.ndarray) -> np.ndarray:
        """Features for frames of shape (n, frame_length) -> (n, 12)"""
        spectrum = np.fft.rfft(frames * self.window, n=self.dsp.fft_length, axis=-1)
        power = spectrum.real ** 2 + spectrum.imag ** 2
        energies = power @ self.filterbank.T
        log_energies = np.log(np.maximum(energies, self.dsp.log_floor))
        cepstrum = dct(log_energies, type=2, norm='ortho', axis=-1)
        return cepstrum[..., 1:N_COEFFS + 1]


@lru_cache(maxsize=8)
def get_extractor(dsp: DspConfig) -> MfccExtractor:
    return MfccExtractor(dsp)


def _check_frame(frame, dsp: DspConfig) -> np.ndarray:
    x = np.asarray(frame, dtype=float)
    if x.shape != (dsp.frame_length,):
        raise DomainError(f"frame must hold {dsp.frame_length} samples, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("frame holds non-finite samples")
    return x


def rms(frame) -> float:
    x = np.asarray(frame, dtype=float)
    return float(np.sqrt(np.mean(x * x)))


def extract_mfcc(frame, dsp: DspConfig = DspConfig()) -> np.ndarray:
    """
    MFCC coefficients 2-13 of one frame
    Args:
        frame: 200 samples in [-1, 1]
        dsp: Front-end parameters
    Returns:
        Array of 12 coefficients
    """
    x = _check_frame(frame, dsp)
    return get_extractor(dsp).extract_batch(x[None, :])[0]


@dataclass(eq=False)
class VadModel:
    weights: np.ndarray
    bias: float
    feat_mean: np.ndarray
    feat_std: np.ndarray
    rms_threshold: float = 0.01
    segment_speech_fraction: float = 0.5
    regularization: Optional[float] = None
    cv_accuracy: Optional[float] = None
    dsp: DspConfig = field(default_factory=DspConfig)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.feat_mean = np.asarray(self.feat_mean, dtype=float)
        self.feat_std = np.asarray(self.feat_std, dtype=float)
        for name in ('weights', 'feat_mean', 'feat_std'):
            if getattr(self, name).shape != (N_COEFFS,):
                raise DomainError(f"{name} must hold {N_COEFFS} values")
        if np.any(self.feat_std <= 0):
            raise DomainError("feat_std must be strictly positive")
        if not 0 < self.rms_threshold < 1:
            raise DomainError(f"rms_threshold must be in (0, 1), got {self.rms_threshold}")
        if not 0 < self.segment_speech_fraction <= 1:
            raise DomainError(f"segment_speech_fraction must be in (0, 1], got {self.segment_speech_fraction}")

    @classmethod
    def zeros(cls, bias: float = 0.0, **kwargs) -> 'VadModel':
        return cls(np.zeros(N_COEFFS), bias, np.zeros(N_COEFFS), np.ones(N_COEFFS), **kwargs)

    def decision_values(self, features: np.ndarray) -> np.ndarray:
        return ((features - self.feat_mean) / self.feat_std) @ self.weights + self.bias


def classify_frame(model: VadModel, features) -> Label:
    value = model.decision_values(np.asarray(features, dtype=float))
    return Label.SPEECH if value > 0 else Label.NON_SPEECH


def decide_segment(model: VadModel, samples) -> SegmentDecision:
    """
    Silence / Speech / NonSpeech decision for one second of 8 kHz audio
    Args:
        model: Trained VAD model
        samples: Exactly one second of samples
    Returns:
        SegmentDecision
    """
    dsp = model.dsp
    x = np.asarray(samples, dtype=float)
    if x.shape != (dsp.sample_rate,):
        raise DomainError(f"segment must hold {dsp.sample_rate} samples, got shape {x.shape}")
    if rms(x) < model.rms_threshold:
        return SegmentDecision.SILENCE
    frames = x.reshape(dsp.frames_per_second, dsp.frame_length)
    features = get_extractor(dsp).extract_batch(frames)
    speech_fraction = np.mean(model.decision_values(features) > 0)
    if speech_fraction >= model.segment_speech_fraction:
        return SegmentDecision.SPEECH
    return SegmentDecision.NON_SPEECH


def detect_chunk(model: VadModel, samples) -> Optional[int]:
    """Index of the first Speech second in a runtime chunk (5 s by default), or None"""
    sr = model.dsp.sample_rate
    x = np.asarray(samples, dtype=float)
    if x.size == 0 or x.size % sr:
        raise DomainError(f"chunk length must be a positive multiple of {sr} samples")
    for i in range(x.size // sr):
        if decide_segment(model, x[i * sr:(i + 1) * sr]) is SegmentDecision.SPEECH:
            return i
    return None


def calibrate_rms_threshold(samples, percentile: float = 25.0, sr: int = 8000) -> float:
    """p-th percentile of per-second RMS over an ambient recording"""
    x = np.asarray(samples, dtype=float)
    n = x.size // sr
    if n == 0:
        raise DomainError("ambient recording shorter than one second")
    per_second = np.sqrt(np.mean(x[:n * sr].reshape(n, sr) ** 2, axis=1))
    threshold = float(np.percentile(per_second, percentile))
    if not 0 < threshold < 1:
        raise DomainError(f"calibrated threshold {threshold} outside (0, 1)")
    return threshold


class LinearSVM(BaseEstimator, ClassifierMixin):
    """
    L2-regularized hinge loss minimized by full-batch subgradient descent.
    Deterministic: no sampling inside fit, fixed epoch count and step schedule.
    """

    def __init__(self, alpha: float = 0.1, epochs: int = 200, learning_rate: float = 0.5):
        self.alpha = alpha
        self.epochs = epochs
        self.learning_rate = learning_rate

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        signs = np.where(np.asarray(y) == 1, 1.0, -1.0)
        n = X.shape[0]
        w = np.zeros(X.shape[1])
        b = 0.0
        for t in range(1, self.epochs + 1):
            margins = signs * (X @ w + b)
            active = margins < 1.0
            grad_w = self.alpha * w - (signs[active, None] * X[active]).sum(axis=0) / n
            grad_b = -signs[active].sum() / n
            eta = self.learning_rate / np.sqrt(t)
            w = w - eta * grad_w
            b = b - eta * grad_b
        self.coef_ = w
        self.intercept_ = float(b)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        return np.asarray(X, dtype=float) @ self.coef_ + self.intercept_

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)


def _label_indicator(labels: Sequence[Label]) -> np.ndarray:
    return np.array([1 if label is Label.SPEECH else 0 for label in labels], dtype=int)


def train(features: np.ndarray, labels: Sequence[Label], hyper_grid: Sequence[float] = (0.01, 0.1, 1.0, 10.0),
          folds: int = 10, seed: int = 0, epochs: int = 200, learning_rate: float = 0.5,
          rms_threshold: float = 0.01, segment_speech_fraction: float = 0.5) -> VadModel:
    """
    Train the frame classifier with stratified k-fold selection of the regularization strength
    Args:
        features: Array (n, 12) of MFCC features
        labels: Label per row
        hyper_grid: Candidate regularization strengths
        folds: Number of stratified folds
        seed: Fold shuffling seed
    Returns:
        VadModel refit on all rows at the selected strength
    """
    X = np.asarray(features, dtype=float)
    y = _label_indicator(labels)
    if X.ndim != 2 or X.shape[1] != N_COEFFS or X.shape[0] != y.size:
        raise TrainingError(f"expected features of shape (n, {N_COEFFS}) matching {y.size} labels, got {X.shape}")
    counts = np.bincount(y, minlength=2)
    if counts.min() == 0:
        raise TrainingError("training data holds a single class")
    if counts.min() < folds:
        raise TrainingError(f"need at least {folds} examples per class, got {counts.tolist()}")

    feat_mean = X.mean(axis=0)
    feat_std = X.std(axis=0)
    feat_std[feat_std == 0] = 1.0
    Xn = (X - feat_mean) / feat_std

    search = GridSearchCV(
        LinearSVM(epochs=epochs, learning_rate=learning_rate),
        {'alpha': list(hyper_grid)},
        cv=StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed),
        scoring='accuracy',
        refit=True,
    )
    search.fit(Xn, y)
    best = search.best_estimator_
    logger.info(f"VAD training: alpha={search.best_params_['alpha']} cv accuracy={search.best_score_:.4f} "
                f"on {X.shape[0]} frames")
    return VadModel(
        weights=best.coef_.copy(),
        bias=best.intercept_,
        feat_mean=feat_mean,
        feat_std=feat_std,
        rms_threshold=rms_threshold,
        segment_speech_fraction=segment_speech_fraction,
        regularization=float(search.best_params_['alpha']),
        cv_accuracy=float(search.best_score_),
    )


def segment_features(segments: np.ndarray, labels: Sequence[Label], dsp: DspConfig = DspConfig(),
                     frames_per_segment: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Frame features for labeled 1-second segments; frames inherit the segment label"""
    extractor = get_extractor(dsp)
    per_second = dsp.frames_per_second
    step = 1 if not frames_per_segment else max(1, per_second // frames_per_segment)
    frames = np.asarray(segments, dtype=float).reshape(len(segments), per_second, dsp.frame_length)[:, ::step]
    feats = extractor.extract_batch(frames.reshape(-1, dsp.frame_length))
    frame_labels = np.repeat(np.asarray(labels, dtype=object), frames.shape[1])
    return feats, frame_labels


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    shr: float
    far: float


def rates(tp: int, fn: int, tn: int, fp: int) -> EvalMetrics:
    """Accuracy, speech hit rate and false alarm rate (one minus the noise hit rate)"""
    positives = tp + fn
    negatives = tn + fp
    if positives == 0 or negatives == 0:
        raise UndefinedMetricError("metric undefined: both speech and non-speech examples are required")
    return EvalMetrics(
        accuracy=(tp + tn) / (positives + negatives),
        shr=tp / positives,
        far=fp / negatives,
    )


def metrics_from_labels(y_true: Sequence[Label], y_pred: Sequence[Label]) -> EvalMetrics:
    t = _label_indicator(y_true)
    p = _label_indicator(y_pred)
    return rates(tp=int(np.sum((t == 1) & (p == 1))), fn=int(np.sum((t == 1) & (p == 0))),
                 tn=int(np.sum((t == 0) & (p == 0))), fp=int(np.sum((t == 0) & (p == 1))))


def evaluate(model: VadModel, features: np.ndarray, labels: Sequence[Label]) -> EvalMetrics:
    """Frame-level evaluation"""
    values = model.decision_values(np.asarray(features, dtype=float))
    predicted = [Label.SPEECH if v > 0 else Label.NON_SPEECH for v in values]
    return metrics_from_labels(labels, predicted)


def evaluate_segments(model: VadModel, segments: np.ndarray, labels: Sequence[Label]) -> EvalMetrics:
    """Second-level evaluation; Silence counts as a non-speech detection"""
    predicted = [Label.SPEECH if decide_segment(model, s) is SegmentDecision.SPEECH else Label.NON_SPEECH
                 for s in segments]
    return metrics_from_labels(labels, predicted)


def measure_frame_latency(model: VadModel, frames: Sequence[np.ndarray]) -> float:
    """Mean wall-clock seconds of feature extraction plus classification per frame"""
    if len(frames) == 0:
        raise DomainError("latency measurement needs at least one frame")
    total = 0.0
    for frame in frames:
        start = time.perf_counter()
        classify_frame(model, extract_mfcc(frame, model.dsp))
        total += time.perf_counter() - start
    return total / len(frames)


class DspConfigSchema(Schema):
    sample_rate = fields.Integer(required=True, strict=True)
    frame_length = fields.Integer(required=True, strict=True)
    fft_length = fields.Integer(required=True, strict=True)
    n_filters = fields.Integer(required=True, strict=True)
    log_floor = fields.Float(required=True)
    fmin = fields.Float(required=True)
    fmax = fields.Float(required=True)

    @post_load
    def make(self, data, **kwargs):
        return DspConfig(**data)


class VadModelSchema(Schema):
    format_version = fields.Integer(required=True, validate=validate.Equal(MODEL_FORMAT_VERSION))
    weights = fields.List(fields.Float(), required=True, validate=validate.Length(equal=N_COEFFS))
    bias = fields.Float(required=True)
    feat_mean = fields.List(fields.Float(), required=True, validate=validate.Length(equal=N_COEFFS))
    feat_std = fields.List(fields.Float(validate=validate.Range(min=0, min_inclusive=False)),
                           required=True, validate=validate.Length(equal=N_COEFFS))
    rms_threshold = fields.Float(required=True, validate=validate.Range(min=0, max=1, min_inclusive=False,
                                                                        max_inclusive=False))
    segment_speech_fraction = fields.Float(required=True, validate=validate.Range(min=0, max=1, min_inclusive=False))
    regularization = fields.Float(allow_none=True, load_default=None)
    cv_accuracy = fields.Float(allow_none=True, load_default=None)
    dsp = fields.Nested(DspConfigSchema, required=True)

    @post_load
    def make(self, data, **kwargs):
        data.pop('format_version')
        return VadModel(**data)


def model_to_dict(model: VadModel) -> Dict:
    return {
        'format_version': MODEL_FORMAT_VERSION,
        'weights': model.weights.tolist(),
        'bias': float(model.bias),
        'feat_mean': model.feat_mean.tolist(),
        'feat_std': model.feat_std.tolist(),
        'rms_threshold': float(model.rms_threshold),
        'segment_speech_fraction': float(model.segment_speech_fraction),
        'regularization': model.regularization,
        'cv_accuracy': model.cv_accuracy,
        'dsp': DspConfigSchema().dump(model.dsp),
    }


def save_model(model: VadModel, path: str) -> None:
    with open(path, 'w') as f:
        json.dump(model_to_dict(model), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"VAD model saved to {path}")


def load_model(path: str) -> VadModel:
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: not a model file ({e})")
    try:
        return VadModelSchema().load(raw)
    except ValidationError as e:
        raise SchemaError(f"{path}: {e.messages}")
