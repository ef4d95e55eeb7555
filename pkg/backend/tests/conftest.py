"""Shared fixtures for the backend test suite."""

import os
import sys
from datetime import date

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import synth  # noqa: E402
import vad  # noqa: E402
from escalation import AvailabilityWindows  # noqa: E402
from metrics import expected_hours  # noqa: E402
from obslog import ConfigLog, EventTally, HourlyLog, RecordingAnnotation  # noqa: E402
from scenario import ComplianceParams, FaultParams, PathLossParams, TransportParams  # noqa: E402
from session import TimingConfig  # noqa: E402

HOUR_S = 3600


@pytest.fixture
def timing():
    return TimingConfig()


@pytest.fixture(scope='session')
def small_corpus():
    """300 labeled seconds of synthetic audio"""
    return synth.make_corpus(300, np.random.default_rng(7))


@pytest.fixture(scope='session')
def trained_model(small_corpus):
    segments, labels = small_corpus
    features, frame_labels = vad.segment_features(segments, labels, frames_per_segment=10)
    return vad.train(features, frame_labels, hyper_grid=(0.1, 1.0), folds=5, seed=0)


# -- study fixtures ----------------------------------------------------------

NO_FAULTS = FaultParams(charge_failure_prob=0.0, crash_prob_per_hour=0.0, restart_failure_prob=0.0,
                        ble_failure_prob=0.0, internet_outage_prob_per_day=0.0, server_hangup_prob_per_day=0.0)
EAGER = ComplianceParams(start_prob=1.0, complete_prob=1.0, start_delay_mean_s=0.0, completion_duration_s=0.0,
                         diary_prob=1.0, diary_delay_mean_s=0.0)
CLEAN_LINKS = TransportParams(jitter_ms=(0, 0, 0), drop_prob=(0.0, 0.0, 0.0))
QUIET_RADIO = PathLossParams(noise_std_db=0.0)


@pytest.fixture
def healthy_sections():
    """Scenario sections with no faults, perfect compliance and deterministic links"""
    return {'faults': NO_FAULTS, 'compliance': EAGER, 'transport': CLEAN_LINKS, 'path_loss': QUIET_RADIO}


def hourly(couple_id, hour_start, retained=None, **tallies):
    """Hourly log with tallies given as timestamp lists"""
    fields = {name: EventTally.of(ts) for name, ts in tallies.items()}
    return HourlyLog(couple_id, hour_start, hour_start + HOUR_S, 80.0, retained_recording_start=retained,
                     storage_remaining_mb=1000.0, **fields)


FULL_WINDOWS = AvailabilityWindows((4, 11), (16, 23), (4, 11), (16, 23))
SHORT_WINDOWS = AvailabilityWindows((7, 9), (16, 16), (6, 11), (16, 16))


def _study_logs():
    """
    Config and hourly logs encoding the deployment's sample counts:
    1392 expected, 1028 with the app running, 1019 collected and triggered,
    618 started and 598 completed.
    """
    configs = [ConfigLog(f"c{i + 1:02d}", -86400, '2019-09-02', 7, FULL_WINDOWS) for i in range(14)]
    configs.append(ConfigLog('c15', -86400, '2019-09-02', 7, SHORT_WINDOWS))
    hours = [(c.couple_id, h) for c in configs
             for h in expected_hours(c.availability, date.fromisoformat(c.study_start), c.days)]
    assert len(hours) == 1392
    logs = []
    for i, (couple_id, h) in enumerate(hours[:1028]):
        if i >= 1019:
            logs.append(hourly(couple_id, h))
            continue
        start = h + 600
        logs.append(hourly(
            couple_id, h, retained=start,
            recordings=[start], selfreport_alert1=[start + 300],
            selfreport_started=[start + 360] if i < 618 else [],
            selfreport_completed=[start + 420] if i < 598 else [],
        ))
    return configs, logs


@pytest.fixture(scope='session')
def study_logs():
    return _study_logs()


def _annotation_rows(prefix, kind, n_conversation, n_one_partner, n_speech_only, n_none):
    out = []
    rows = ([(True, True, True, True)] * n_conversation + [(True, True, False, False)] * n_one_partner
            + [(True, False, False, False)] * n_speech_only + [(False, False, False, False)] * n_none)
    for i, (speech, male, female, conversation) in enumerate(rows):
        out.append(RecordingAnnotation(f"{prefix}{i:04d}", speech, male, female, conversation, kind))
    return out


@pytest.fixture(scope='session')
def study_annotations():
    """
    1014 annotated recordings: 277 triggered (256 with speech, 244 with at
    least one partner speaking, 215 conversations) and 737 backup (535 with
    speech, 323 conversations). The 244 makes the one-partner share round to 88.1%.
    """
    return (_annotation_rows('t', 'Triggered', 215, 29, 12, 21)
            + _annotation_rows('b', 'Backup', 323, 212, 0, 202))
