"""Independent checks of the recording rules over emitted hourly logs."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

from obslog import HourlyLog
from session import TimingConfig, minute_of_hour

logger = logging.getLogger(__name__)

HOUR_S = 3600


@dataclass(frozen=True)
class Violation:
    couple_id: str
    hour_start: int
    rule: str
    detail: str

    def __str__(self):
        return f"{self.couple_id} @ {self.hour_start}: {self.rule}: {self.detail}"


def validate_session_logs(hourly: Sequence[HourlyLog], timing: TimingConfig = TimingConfig()) -> List[Violation]:
    """
    Re-derive the recording rules from the logs alone
    Args:
        hourly: Hourly logs, any order, any number of couples
        timing: Timing the logs were produced with
    Returns:
        Violations found (empty when the logs are consistent)
    """
    violations: List[Violation] = []
    by_couple: Dict[str, List[HourlyLog]] = {}
    for log in hourly:
        by_couple.setdefault(log.couple_id, []).append(log)

    for couple_id, logs in sorted(by_couple.items()):
        logs = sorted(logs, key=lambda l: l.hour_start)
        previous_start = None
        for log in logs:
            def flag(rule, detail):
                violations.append(Violation(couple_id, log.hour_start, rule, detail))

            starts = sorted(log.recordings.timestamps)
            retained = log.retained_recording_start

            if retained is not None:
                if starts[-1] != retained:
                    flag('retained-is-last', f"retained {retained} but last recording started {starts[-1]}")
                if not (log.selfreport_started or log.selfreport_completed):
                    flag('retained-needs-selfreport', f"recording {retained} kept without a started self-report")
            if log.recordings.count > (1 if retained is not None else 0) and not log.audio_discarded:
                flag('deleted-audio', "recordings were dropped but audio_discarded is false")

            for start in starts:
                if start + timing.record_duration > log.hour_start + HOUR_S + timing.hour_grace:
                    flag('within-hour', f"recording at {start} runs past the hour")
                if previous_start is not None and start - previous_start < timing.min_gap:
                    flag('min-gap', f"starts {previous_start} and {start} are {start - previous_start} s apart")
                previous_start = start

            if log.was_backup != any(minute_of_hour(s) >= timing.backup_minute for s in starts):
                flag('backup-flag', f"was_backup={log.was_backup} disagrees with recording minutes")

            uninterrupted = not log.restarts and not log.errors
            triggered_early = any(minute_of_hour(s) < timing.backup_minute for s in starts)
            if uninterrupted and not triggered_early:
                late = [s for s in starts if minute_of_hour(s) >= timing.backup_minute]
                if len(late) != 1:
                    flag('backup-iff-no-trigger', f"{len(late)} backup recordings in an hour without a trigger")

    if violations:
        logger.warning(f"{len(violations)} session rule violations in {len(hourly)} hourly logs")
    return violations
