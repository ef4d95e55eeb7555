"""Device, app and network faults drawn for one couple's study."""

import logging
from dataclasses import dataclass
from typing import FrozenSet, List, Sequence, Tuple

import numpy as np

from scenario import FaultParams

logger = logging.getLogger(__name__)

DAY_S = 86400
HOUR_S = 3600

Span = Tuple[int, int]


@dataclass(frozen=True)
class Crash:
    at: int
    restart_ok: bool
    restored_at: int


@dataclass(frozen=True)
class FaultSchedule:
    charge_failure_days: FrozenSet[int] = frozenset()
    crashes: Tuple[Crash, ...] = ()
    internet_outages: Tuple[Span, ...] = ()
    server_hangups: Tuple[Span, ...] = ()

    def watch_dead(self, t: int) -> bool:
        return t // DAY_S in self.charge_failure_days

    def internet_down_during(self, start: int, end: int) -> bool:
        return any(s < end and start < e for s, e in self.internet_outages)


def restore_time(at: int, restart_ok: bool, watchdog: bool) -> int:
    """
    When the app runs again after a crash at `at`
    Args:
        at: Crash time
        restart_ok: Whether the exception handler's restart alarm worked
        watchdog: Whether the hourly checker app is installed
    Returns:
        Next second, next full hour, or next midnight reboot
    """
    if restart_ok:
        return at + 1
    if watchdog:
        return (at // HOUR_S + 1) * HOUR_S
    return (at // DAY_S + 1) * DAY_S


def _merge(spans: List[Span]) -> Tuple[Span, ...]:
    merged: List[Span] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return tuple(merged)


def apply_faults(active_hours: Sequence[int], days: int, faults: FaultParams,
                 rng: np.random.Generator) -> FaultSchedule:
    """
    Draw the fault schedule for one couple
    Args:
        active_hours: hour_start of every hour the watch app collects data
        days: Study length
        faults: Fault probabilities
        rng: The couple's seeded fault stream
    Returns:
        FaultSchedule
    """
    charge_failed = frozenset(int(d) for d in np.flatnonzero(rng.random(days) < faults.charge_failure_prob))

    hours = np.asarray(active_hours, dtype=np.int64)
    crash_draw = rng.random(hours.size)
    offsets = rng.integers(0, HOUR_S, hours.size)
    restart_draw = rng.random(hours.size)
    crashes = []
    down_until = None
    for hour, u, offset, r in zip(hours, crash_draw, offsets, restart_draw):
        at = int(hour + offset)
        if u >= faults.crash_prob_per_hour or at // DAY_S in charge_failed:
            continue
        if down_until is not None and at < down_until:
            continue
        ok = bool(r >= faults.restart_failure_prob)
        crash = Crash(at, ok, restore_time(at, ok, faults.watchdog))
        crashes.append(crash)
        down_until = crash.restored_at

    outage_draw = rng.random(days)
    outage_start = rng.integers(0, DAY_S, days)
    outage_len = np.maximum(60, np.rint(rng.exponential(faults.internet_outage_mean_min * 60, days)))
    outages = [(int(d * DAY_S + s), int(d * DAY_S + s + n))
               for d, (u, s, n) in enumerate(zip(outage_draw, outage_start, outage_len))
               if u < faults.internet_outage_prob_per_day]

    hangup_draw = rng.random(days)
    hangup_start = rng.integers(0, DAY_S, days)
    hangup_len = int(faults.server_restart_min * 60)
    hangups = [(int(d * DAY_S + s), int(d * DAY_S + s + hangup_len))
               for d, (u, s) in enumerate(zip(hangup_draw, hangup_start)) if u < faults.server_hangup_prob_per_day]

    schedule = FaultSchedule(charge_failed, tuple(crashes), _merge(outages), _merge(hangups))
    logger.debug(f"Faults: {len(charge_failed)} charge failures, {len(crashes)} crashes, "
                 f"{len(schedule.internet_outages)} outages, {len(schedule.server_hangups)} hang-ups")
    return schedule
