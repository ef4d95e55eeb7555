"""
Physical closeness from BLE signal strength.

RSSI follows a log-distance path loss curve with Gaussian shadowing; the
central watch keeps scanning until a sample breaches the closeness threshold.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np

from errors import DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class PathLossModel:
    rssi_at_1m_dbm: float = -66.0
    path_loss_exponent: float = 2.0
    noise_std_db: float = 4.0

    def __post_init__(self):
        if self.path_loss_exponent < 1:
            raise DomainError(f"path_loss_exponent must be >= 1, got {self.path_loss_exponent}")
        if self.noise_std_db < 0:
            raise DomainError(f"noise_std_db must be >= 0, got {self.noise_std_db}")

    @classmethod
    def from_config(cls, config) -> 'PathLossModel':
        return cls(config.RSSI_AT_1M_DBM, config.PATH_LOSS_EXPONENT, config.RSSI_NOISE_STD_DB)


@dataclass(frozen=True)
class RssiSample:
    timestamp_ms: int
    rssi_dbm: float

    def __post_init__(self):
        if not self.rssi_dbm < 0:
            raise DomainError(f"RSSI must be negative, got {self.rssi_dbm}")


@dataclass(frozen=True)
class ProximityConfig:
    threshold_dbm: float = -80.0
    scan_period_ms: int = 1000
    disconnect_dbm: float = -95.0

    def __post_init__(self):
        if not self.threshold_dbm < 0:
            raise DomainError(f"threshold_dbm must be negative, got {self.threshold_dbm}")
        if self.scan_period_ms <= 0:
            raise DomainError("scan_period_ms must be positive")

    @classmethod
    def from_config(cls, config) -> 'ProximityConfig':
        return cls(config.PROXIMITY_THRESHOLD_DBM, config.SCAN_PERIOD_MS, config.DISCONNECT_DBM)


class ScanOutcome(Enum):
    KEEP_SCANNING = 'KeepScanning'
    ATTEMPT_CONNECT = 'AttemptConnect'


@dataclass(frozen=True)
class ScanState:
    """Central role scan state within one data-collection hour"""
    active: bool = True
    samples_seen: int = 0
    attempts: int = 0


def predict_rssi(model: PathLossModel, distance_m: ArrayLike, noise_draw: ArrayLike = 0.0) -> ArrayLike:
    """
    Signal strength at a distance
    Args:
        model: Path loss parameters
        distance_m: Distance(s) in meters, strictly positive
        noise_draw: Standard-normal draw(s) scaled by the shadowing std-dev
    Returns:
        RSSI in dB (scalar or array, matching the inputs)
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise DomainError(f"distance must be positive, got {distance_m}")
    rssi = (model.rssi_at_1m_dbm
            - 10.0 * model.path_loss_exponent * np.log10(d)
            + model.noise_std_db * np.asarray(noise_draw, dtype=float))
    if np.ndim(rssi) == 0:
        return float(rssi)
    return rssi


def estimate_distance(model: PathLossModel, rssi_dbm: ArrayLike) -> ArrayLike:
    """Invert the noiseless curve"""
    d = 10.0 ** ((model.rssi_at_1m_dbm - np.asarray(rssi_dbm, dtype=float)) / (10.0 * model.path_loss_exponent))
    if np.ndim(d) == 0:
        return float(d)
    return d


def crossing_distance(model: PathLossModel, threshold_dbm: float = -80.0) -> float:
    return estimate_distance(model, threshold_dbm)


def proximate_mask(rssi_dbm: ArrayLike, config: ProximityConfig) -> np.ndarray:
    # strictly greater: a sample sitting on the threshold is not close
    return np.asarray(rssi_dbm) > config.threshold_dbm


def lost_mask(rssi_dbm: ArrayLike, config: ProximityConfig) -> np.ndarray:
    """Samples too weak to keep the BLE connection"""
    return np.asarray(rssi_dbm) < config.disconnect_dbm


def is_proximate(sample: RssiSample, config: ProximityConfig) -> bool:
    return bool(proximate_mask(sample.rssi_dbm, config))



def scan_step(state: ScanState, sample: RssiSample, config: ProximityConfig) -> Tuple[ScanState, ScanOutcome]:
    """
    Consume one scan observation
    Args:
        state: Current scan state (must be active)
        sample: Observed RSSI sample
        config: Threshold configuration
    Returns:
        (new state, outcome); the state is returned unchanged when scanning continues
    """
    if not state.active:
        raise DomainError("scan_step called while scanning is inactive")
    if is_proximate(sample, config):
        logger.debug(f"Closeness met at {sample.timestamp_ms} ms ({sample.rssi_dbm:.1f} dB)")
        return replace(state, samples_seen=state.samples_seen + 1,
                       attempts=state.attempts + 1), ScanOutcome.ATTEMPT_CONNECT
    return state, ScanOutcome.KEEP_SCANNING


def simulate_calibration(model: PathLossModel, distances: Sequence[float],
                         rng: np.random.Generator, repeats: int = 10) -> np.ndarray:
    """Fixed peripheral, central moved through `distances`, each measured `repeats` times and averaged"""
    d = np.asarray(distances, dtype=float)
    draws = rng.standard_normal((repeats, d.size))
    return np.asarray(predict_rssi(model, d[None, :], draws)).mean(axis=0)


def fit_path_loss(distances: Sequence[float], mean_rssi: Sequence[float], noise_std_db: float = 0.0) -> PathLossModel:
    """
    Least-squares fit of the log-distance curve to a measured RSSI curve
    Args:
        distances: Measurement distances in meters
        mean_rssi: Averaged RSSI at each distance
        noise_std_db: Shadowing std-dev to attach to the fitted model
    Returns:
        Fitted PathLossModel
    """
    x = np.log10(np.asarray(distances, dtype=float))
    y = np.asarray(mean_rssi, dtype=float)
    if x.size < 2:
        raise DomainError("need at least two distances to fit a path loss curve")
    slope, intercept = np.polyfit(x, y, 1)
    exponent = max(1.0, -slope / 10.0)
    logger.info(f"Fitted path loss: {intercept:.2f} dB at 1 m, exponent {exponent:.2f}")
    return PathLossModel(float(intercept), float(exponent), noise_std_db)
