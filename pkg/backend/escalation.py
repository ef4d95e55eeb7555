"""
Daily adherence checks: the 2 pm morning check and the end-of-day check.

Thresholds: a period passes at exactly 60% of its expected self-reports;
the day escalates to participant and supervisor below 30% overall or when
the end-of-day diary was not filled in.
"""

import logging
from dataclasses import dataclass
from datetime import date
from enum import Enum
from typing import Iterable, List, Optional, Tuple

from errors import DomainError

logger = logging.getLogger(__name__)

AFTERNOON_CHECK_HOUR = 14
MORNING_BOUNDS = (4, 11)
EVENING_BOUNDS = (16, 23)

# integer tenths so that 3/5 passes the 60% rule exactly
PERIOD_PASS_TENTHS = 6
DAY_ESCALATE_TENTHS = 3

Window = Tuple[int, int]


def _check_window(name: str, window: Window, bounds: Tuple[int, int]):
    start, end = window
    if not (isinstance(start, int) and isinstance(end, int)):
        raise DomainError(f"{name} must use whole hours, got {window}")
    if not bounds[0] <= start <= end <= bounds[1]:
        raise DomainError(f"{name} {window} outside {bounds[0]:02d}:00-{bounds[1]:02d}:00")


@dataclass(frozen=True)
class AvailabilityWindows:
    """(start, end) hours per period; start == end means the period is empty"""
    weekday_morning: Window = (7, 11)
    weekday_evening: Window = (17, 22)
    weekend_morning: Window = (7, 11)
    weekend_evening: Window = (17, 22)

    def __post_init__(self):
        for name in ('weekday_morning', 'weekend_morning'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            _check_window(name, getattr(self, name), MORNING_BOUNDS)
        for name in ('weekday_evening', 'weekend_evening'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            _check_window(name, getattr(self, name), EVENING_BOUNDS)

    def morning_hours(self, day: date) -> List[int]:
        start, end = self.weekend_morning if day.weekday() >= 5 else self.weekday_morning
        return list(range(start, end))

    def evening_hours(self, day: date) -> List[int]:
        start, end = self.weekend_evening if day.weekday() >= 5 else self.weekday_evening
        return list(range(start, end))

    def hours(self, day: date) -> List[int]:
        return self.morning_hours(day) + self.evening_hours(day)

    def to_dict(self):
        return {name: list(getattr(self, name))
                for name in ('weekday_morning', 'weekday_evening', 'weekend_morning', 'weekend_evening')}


def expected_counts(windows: AvailabilityWindows, day: date) -> Tuple[int, int]:
    """One expected sample per availability hour in each period"""
    return len(windows.morning_hours(day)), len(windows.evening_hours(day))


@dataclass(frozen=True)
class DayStats:
    expected_morning: int
    completed_morning: int
    expected_evening: int
    completed_evening: int
    diary_completed: bool

    def __post_init__(self):
        for period in ('morning', 'evening'):
            expected = getattr(self, f"expected_{period}")
            completed = getattr(self, f"completed_{period}")
            if not 0 <= completed <= expected:
                raise DomainError(f"{period}: completed {completed} must lie in [0, {expected}]")


class EscalationAction(Enum):
    REMINDER_SMS_MORNING_CHECK = 'ReminderSmsMorningCheck'
    REMINDER_SMS_EVENING_CHECK = 'ReminderSmsEveningCheck'
    PARTICIPANT_SMS = 'ParticipantSms'
    SUPERVISOR_EMAIL = 'SupervisorEmail'


@dataclass(frozen=True)
class EscalationDecision:
    actions: Tuple[EscalationAction, ...] = ()

    def __contains__(self, action):
        return action in self.actions

    @property
    def names(self) -> List[str]:
        return [a.value for a in self.actions]


def _below(completed: int, expected: int, tenths: int) -> bool:
    return completed * 10 < expected * tenths


def afternoon_check(stats: DayStats) -> EscalationDecision:
    """Reminder when fewer than 60% of the morning self-reports were completed"""
    if stats.expected_morning and _below(stats.completed_morning, stats.expected_morning, PERIOD_PASS_TENTHS):
        return EscalationDecision((EscalationAction.REMINDER_SMS_MORNING_CHECK,))
    return EscalationDecision()


def end_of_day_check(stats: DayStats) -> EscalationDecision:
    """
    Evening reminder plus participant/supervisor escalation
    Args:
        stats: The day's expected and completed counts and diary status
    Returns:
        EscalationDecision
    """
    actions = []
    if stats.expected_evening and _below(stats.completed_evening, stats.expected_evening, PERIOD_PASS_TENTHS):
        actions.append(EscalationAction.REMINDER_SMS_EVENING_CHECK)
    expected = stats.expected_morning + stats.expected_evening
    completed = stats.completed_morning + stats.completed_evening
    if not stats.diary_completed or (expected and _below(completed, expected, DAY_ESCALATE_TENTHS)):
        actions += [EscalationAction.PARTICIPANT_SMS, EscalationAction.SUPERVISOR_EMAIL]
    return EscalationDecision(tuple(actions))


def diary_completed(delay_s: Optional[float], eod_expiry: int = 45 * 60) -> bool:
    """The end-of-day diary counts when started before it expires"""
    return delay_s is not None and delay_s < eod_expiry


def day_stats(windows: AvailabilityWindows, day: date, completed_hours: Iterable[int],
              diary_done: bool) -> DayStats:
    """Split the hours with a completed self-report into the morning and evening periods"""
    completed = set(completed_hours)
    morning = windows.morning_hours(day)
    evening = windows.evening_hours(day)
    return DayStats(
        expected_morning=len(morning),
        completed_morning=len(completed.intersection(morning)),
        expected_evening=len(evening),
        completed_evening=len(completed.intersection(evening)),
        diary_completed=diary_done,
    )
