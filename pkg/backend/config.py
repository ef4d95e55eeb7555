import os
from typing import Optional

from dotenv import load_dotenv


def _env_float(name: str, default: float) -> float:
    return float(os.environ.get(name, default))


def _env_int(name: str, default: int) -> int:
    return int(os.environ.get(name, default))


class Config:
    """Runtime configuration, read from DYMAND_* environment variables."""

    def __init__(self):
        # Paths
        self.OUTPUT_DIR = os.environ.get('DYMAND_OUTPUT_DIR') or 'output'
        self.MODELS_FOLDER = os.environ.get('DYMAND_MODELS_FOLDER') or 'models'
        self.DEFAULT_SCENARIO = os.environ.get('DYMAND_DEFAULT_SCENARIO') or os.path.join(
            os.path.dirname(os.path.abspath(__file__)), '..', 'scenarios', 'default.json'
        )

        # DSP front-end (8 kHz, 25 ms frames)
        self.SAMPLE_RATE = _env_int('DYMAND_SAMPLE_RATE', 8000)
        self.FRAME_LENGTH = _env_int('DYMAND_FRAME_LENGTH', 200)
        self.FFT_LENGTH = _env_int('DYMAND_FFT_LENGTH', 256)
        self.MEL_FILTERS = _env_int('DYMAND_MEL_FILTERS', 26)
        self.LOG_FLOOR = _env_float('DYMAND_LOG_FLOOR', 1e-10)

        # VAD
        self.RMS_THRESHOLD = _env_float('DYMAND_RMS_THRESHOLD', 0.01)
        self.SEGMENT_SPEECH_FRACTION = _env_float('DYMAND_SEGMENT_SPEECH_FRACTION', 0.5)
        self.VAD_HYPER_GRID = [
            float(v) for v in os.environ.get('DYMAND_VAD_HYPER_GRID', '0.01,0.1,1,10').split(',')
        ]
        self.VAD_FOLDS = _env_int('DYMAND_VAD_FOLDS', 10)
        self.VAD_EPOCHS = _env_int('DYMAND_VAD_EPOCHS', 200)
        self.VAD_LEARNING_RATE = _env_float('DYMAND_VAD_LEARNING_RATE', 0.5)

        # Proximity (log-distance path loss, calibrated so -80 dB sits near 5 m)
        self.RSSI_AT_1M_DBM = _env_float('DYMAND_RSSI_AT_1M_DBM', -66.0)
        self.PATH_LOSS_EXPONENT = _env_float('DYMAND_PATH_LOSS_EXPONENT', 2.0)
        self.RSSI_NOISE_STD_DB = _env_float('DYMAND_RSSI_NOISE_STD_DB', 4.0)
        self.PROXIMITY_THRESHOLD_DBM = _env_float('DYMAND_PROXIMITY_THRESHOLD_DBM', -80.0)
        self.DISCONNECT_DBM = _env_float('DYMAND_DISCONNECT_DBM', -95.0)
        self.SCAN_PERIOD_MS = _env_int('DYMAND_SCAN_PERIOD_MS', 1000)

        # Session timing (seconds on the virtual clock)
        self.RECORD_DURATION_S = _env_int('DYMAND_RECORD_DURATION_S', 5 * 60)
        self.FIRST_ALERT_WAIT_S = _env_int('DYMAND_FIRST_ALERT_WAIT_S', 2 * 60)
        self.SECOND_ALERT_WAIT_S = _env_int('DYMAND_SECOND_ALERT_WAIT_S', 2 * 60)
        self.MIN_GAP_S = _env_int('DYMAND_MIN_GAP_S', 20 * 60)
        self.BACKUP_MINUTE = _env_int('DYMAND_BACKUP_MINUTE', 44)
        self.SELFREPORT_EXPIRY_S = _env_int('DYMAND_SELFREPORT_EXPIRY_S', 4 * 60)
        self.EOD_EXPIRY_S = _env_int('DYMAND_EOD_EXPIRY_S', 45 * 60)

        # Simulator
        self.BLE_LOG_PERIOD_S = _env_int('DYMAND_BLE_LOG_PERIOD_S', 60)
        self.SIM_JOBS = _env_int('DYMAND_SIM_JOBS', 1)


def load_config(env_file: Optional[str] = None) -> Config:
    """
    Build a Config after loading a .env file
    Args:
        env_file: Explicit env file; values in it override the process environment.
    Returns:
        Config instance
    """
    if env_file:
        load_dotenv(env_file, override=True)
    else:
        load_dotenv()
    return Config()
