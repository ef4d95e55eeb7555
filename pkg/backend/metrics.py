"""
Study metrics from hourly logs and recording annotations.

Percentages are 100 x ratio rounded half-up to one decimal.
"""

import logging
from dataclasses import asdict, dataclass, fields
from datetime import date, timedelta
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd

from errors import DomainError, UndefinedMetricError
from escalation import AvailabilityWindows
from obslog import ConfigLog, HourlyLog, RecordingAnnotation

logger = logging.getLogger(__name__)

DAY_S = 86400
HOUR_S = 3600


def percent(numerator: int, denominator: int) -> float:
    """
    Percentage with one decimal, half-up
    Args:
        numerator: Count
        denominator: Non-zero count
    Returns:
        e.g. percent(1019, 1392) == 73.2
    """
    if denominator == 0:
        raise UndefinedMetricError(f"metric undefined: {numerator}/0")
    value = (Decimal(numerator) * 100 / Decimal(denominator)).quantize(Decimal('0.1'), rounding=ROUND_HALF_UP)
    return float(value)


def _maybe_percent(numerator: int, denominator: int) -> Optional[float]:
    return percent(numerator, denominator) if denominator else None


@dataclass(frozen=True)
class CollectionCounts:
    total_expected: int
    expected_app_running: int
    sensor_collected: int
    selfreport_triggered: int
    selfreport_started: int
    selfreport_completed: int

    def __post_init__(self):
        chain = (self.selfreport_completed, self.selfreport_started, self.selfreport_triggered,
                 self.expected_app_running, self.total_expected)
        if any(v < 0 for v in chain) or self.sensor_collected < 0:
            raise DomainError("counts must be non-negative")
        if any(a > b for a, b in zip(chain, chain[1:])):
            raise DomainError(f"counts break completed <= started <= triggered <= running <= expected: {chain}")
        if self.sensor_collected > self.expected_app_running:
            raise DomainError("more samples collected than hours with the app running")

    def __add__(self, other: 'CollectionCounts') -> 'CollectionCounts':
        return CollectionCounts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


@dataclass(frozen=True)
class CollectionMetrics:
    collected_of_expected: Optional[float]
    collected_of_running: Optional[float]
    triggered_of_expected: Optional[float]
    triggered_of_running: Optional[float]
    started_of_triggered: Optional[float]
    completed_of_triggered: Optional[float]

    def as_tuple(self) -> Tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class ConversationMetrics:
    speech_all: Optional[float]
    speech_triggered: Optional[float]
    speech_backup: Optional[float]
    conversation_all: Optional[float]
    conversation_triggered: Optional[float]
    either_spoke_triggered: Optional[float]
    conversation_backup: Optional[float]

    def as_tuple(self) -> Tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


def _collection(counts: CollectionCounts, pct) -> CollectionMetrics:
    return CollectionMetrics(
        collected_of_expected=pct(counts.sensor_collected, counts.total_expected),
        collected_of_running=pct(counts.sensor_collected, counts.expected_app_running),
        triggered_of_expected=pct(counts.selfreport_triggered, counts.total_expected),
        triggered_of_running=pct(counts.selfreport_triggered, counts.expected_app_running),
        started_of_triggered=pct(counts.selfreport_started, counts.selfreport_triggered),
        completed_of_triggered=pct(counts.selfreport_completed, counts.selfreport_triggered),
    )


def collection_metrics(counts: CollectionCounts) -> CollectionMetrics:
    """All six collection percentages; any zero denominator raises UndefinedMetricError"""
    return _collection(counts, percent)


def collection_metrics_or_none(counts: CollectionCounts) -> CollectionMetrics:
    return _collection(counts, _maybe_percent)


def conversation_metrics(annotations: Sequence[RecordingAnnotation]) -> ConversationMetrics:
    """
    Speech and conversation shares over annotated recordings
    Args:
        annotations: Non-empty list of annotations
    Returns:
        ConversationMetrics; a share over a kind with no recordings is None
    """
    if not annotations:
        raise UndefinedMetricError("metric undefined: no annotated recordings")
    df = pd.DataFrame([asdict(a) for a in annotations])
    triggered = df[df['kind'] == 'Triggered']
    backup = df[df['kind'] == 'Backup']
    either = triggered['male_spoke'] | triggered['female_spoke']
    return ConversationMetrics(
        speech_all=percent(int(df['has_speech'].sum()), len(df)),
        speech_triggered=_maybe_percent(int(triggered['has_speech'].sum()), len(triggered)),
        speech_backup=_maybe_percent(int(backup['has_speech'].sum()), len(backup)),
        conversation_all=percent(int(df['conversation'].sum()), len(df)),
        conversation_triggered=_maybe_percent(int(triggered['conversation'].sum()), len(triggered)),
        either_spoke_triggered=_maybe_percent(int(either.sum()), len(triggered)),
        conversation_backup=_maybe_percent(int(backup['conversation'].sum()), len(backup)),
    )


def _study_start(config: ConfigLog) -> date:
    return date.fromisoformat(config.study_start)


def expected_hours(availability: AvailabilityWindows, study_start: date, days: int) -> List[int]:
    """hour_start (seconds from study start) of every availability hour"""
    out = []
    for d in range(days):
        day = study_start + timedelta(days=d)
        out.extend(d * DAY_S + h * HOUR_S for h in availability.hours(day))
    return out


def app_running_hours(logs: Iterable[HourlyLog], availability: AvailabilityWindows,
                      study_start: date, days: int) -> int:
    """Availability hours with an hourly log present"""
    present = {log.hour_start for log in logs}
    return sum(1 for h in expected_hours(availability, study_start, days) if h in present)


def _logs_by_couple(hourly: Iterable[HourlyLog]) -> Dict[str, Dict[int, HourlyLog]]:
    out: Dict[str, Dict[int, HourlyLog]] = {}
    for log in hourly:
        out.setdefault(log.couple_id, {})[log.hour_start] = log
    return out


def collection_counts_from_logs(configs: Sequence[ConfigLog], hourly: Sequence[HourlyLog]) -> CollectionCounts:
    """
    Hour-level counts: an hour counts once per tally, whatever the number of attempts in it
    Args:
        configs: One config log per couple
        hourly: Hourly logs of all couples
    Returns:
        CollectionCounts summed over couples
    """
    if not configs:
        raise UndefinedMetricError("metric undefined: no config logs, expected hours unknown")
    by_couple = _logs_by_couple(hourly)
    total = CollectionCounts(0, 0, 0, 0, 0, 0)
    for config in sorted(configs, key=lambda c: c.couple_id):
        logs = by_couple.get(config.couple_id, {})
        hours = expected_hours(config.availability, _study_start(config), config.days)
        running = [logs[h] for h in hours if h in logs]
        total = total + CollectionCounts(
            total_expected=len(hours),
            expected_app_running=len(running),
            sensor_collected=sum(1 for log in running if log.retained_recording_start is not None),
            selfreport_triggered=sum(1 for log in running if log.selfreport_alert1),
            selfreport_started=sum(1 for log in running if log.selfreport_started or log.selfreport_completed),
            selfreport_completed=sum(1 for log in running if log.selfreport_completed),
        )
    return total


def monitoring_grid(configs: Sequence[ConfigLog], hourly: Sequence[HourlyLog]) -> pd.DataFrame:
    """
    Daily monitoring sheet: per couple, day and availability hour,
    0 = no self-report triggered, 1 = triggered but not completed, 2 = completed
    """
    by_couple = _logs_by_couple(hourly)
    rows = []
    for config in sorted(configs, key=lambda c: c.couple_id):
        logs = by_couple.get(config.couple_id, {})
        start = _study_start(config)
        for hour_start in expected_hours(config.availability, start, config.days):
            log = logs.get(hour_start)
            status = 0
            if log is not None and log.selfreport_completed:
                status = 2
            elif log is not None and log.selfreport_alert1:
                status = 1
            rows.append({'couple_id': config.couple_id,
                         'day': (start + timedelta(days=hour_start // DAY_S)).isoformat(),
                         'hour': (hour_start % DAY_S) // HOUR_S, 'status': status})
    return pd.DataFrame(rows, columns=['couple_id', 'day', 'hour', 'status'])


COLLECTION_LABELS = [
    ('collected_of_expected', 'Collected of expected samples (%)'),
    ('collected_of_running', 'Collected of expected samples with the app running (%)'),
    ('triggered_of_expected', 'Self-reports triggered of expected samples (%)'),
    ('triggered_of_running', 'Self-reports triggered of expected samples with the app running (%)'),
    ('started_of_triggered', 'Self-reports started of triggered (%)'),
    ('completed_of_triggered', 'Self-reports completed of triggered (%)'),
]

CONVERSATION_LABELS = [
    ('speech_all', 'Recordings with speech (%)'),
    ('speech_triggered', 'Triggered recordings with speech (%)'),
    ('speech_backup', 'Backup recordings with speech (%)'),
    ('conversation_all', 'Recordings with a conversation between partners (%)'),
    ('conversation_triggered', 'Triggered recordings with a conversation between partners (%)'),
    ('either_spoke_triggered', 'Triggered recordings where at least one partner spoke (%)'),
    ('conversation_backup', 'Backup recordings with a conversation between partners (%)'),
]

COUNT_LABELS = [
    ('total_expected', 'Expected samples'),
    ('expected_app_running', 'Expected samples with the app running'),
    ('sensor_collected', 'Sensor data collected'),
    ('selfreport_triggered', 'Self-reports triggered'),
    ('selfreport_started', 'Self-reports started'),
    ('selfreport_completed', 'Self-reports completed'),
]


@dataclass(frozen=True)
class StudyReport:
    counts: CollectionCounts
    collection: CollectionMetrics
    conversation: Optional[ConversationMetrics]
    recordings: Dict[str, int]


def build_report(counts: CollectionCounts, annotations: Sequence[RecordingAnnotation]) -> StudyReport:
    conversation = conversation_metrics(annotations) if annotations else None
    recordings = {'total': len(annotations),
                  'triggered': sum(1 for a in annotations if a.kind == 'Triggered'),
                  'backup': sum(1 for a in annotations if a.kind == 'Backup')}
    return StudyReport(counts, collection_metrics_or_none(counts), conversation, recordings)


def _cell(value) -> str:
    return 'n/a' if value is None else f"{value:.1f}"


def render_report(report: StudyReport) -> str:
    """Human-readable report: counts, collection shares, conversation shares"""
    counts = pd.DataFrame({'value': [getattr(report.counts, k) for k, _ in COUNT_LABELS]},
                          index=[label for _, label in COUNT_LABELS])
    collection = pd.DataFrame({'value': [_cell(getattr(report.collection, k)) for k, _ in COLLECTION_LABELS]},
                              index=[label for _, label in COLLECTION_LABELS])
    conversation = pd.DataFrame(
        {'value': [_cell(getattr(report.conversation, k) if report.conversation else None)
                   for k, _ in CONVERSATION_LABELS]},
        index=[label for _, label in CONVERSATION_LABELS])
    recordings = pd.DataFrame({'value': list(report.recordings.values())},
                              index=[f"Annotated recordings ({k})" for k in report.recordings])
    sections = [
        ('Sample counts', counts),
        ('Data collection', collection),
        ('Recording content', pd.concat([recordings, conversation])),
    ]
    parts = []
    for title, frame in sections:
        parts.append(title)
        parts.append(frame.to_string(header=False))
        parts.append('')
    return '\n'.join(parts)


def report_dict(report: StudyReport) -> Dict:
    """Machine-readable report; undefined shares are null"""
    return {
        'counts': asdict(report.counts),
        'collection': asdict(report.collection),
        'conversation': asdict(report.conversation) if report.conversation else
        {k: None for k, _ in CONVERSATION_LABELS},
        'recordings': dict(report.recordings),
    }
