import numpy as np
import pytest

from faults import DAY_S, HOUR_S, FaultSchedule, apply_faults, restore_time
from scenario import FaultParams

QUIET = FaultParams(charge_failure_prob=0.0, crash_prob_per_hour=0.0, restart_failure_prob=0.0,
                    ble_failure_prob=0.0, internet_outage_prob_per_day=0.0, server_hangup_prob_per_day=0.0)


def _day_hours(days, first=7, last=22):
    return [d * DAY_S + h * HOUR_S for d in range(days) for h in range(first, last)]


@pytest.mark.parametrize('restart_ok, watchdog, expected', [
    (True, True, 3701),
    (True, False, 3701),
    (False, True, 7200),
    (False, False, DAY_S),
])
def test_restore_time(restart_ok, watchdog, expected):
    assert restore_time(3700, restart_ok, watchdog) == expected


def test_restore_on_an_exact_hour_waits_for_the_next_one():
    assert restore_time(7200, False, True) == 10800


def test_no_faults_without_probabilities():
    schedule = apply_faults(_day_hours(3), 3, QUIET, np.random.default_rng(0))
    assert schedule == FaultSchedule()


def test_certain_crash_with_working_restart_hits_every_hour():
    params = FaultParams(charge_failure_prob=0.0, crash_prob_per_hour=1.0, restart_failure_prob=0.0)
    hours = _day_hours(2)
    schedule = apply_faults(hours, 2, params, np.random.default_rng(1))
    assert len(schedule.crashes) == len(hours)
    assert all(c.restart_ok and c.restored_at == c.at + 1 for c in schedule.crashes)


def test_crashes_do_not_overlap_downtime():
    params = FaultParams(charge_failure_prob=0.0, crash_prob_per_hour=1.0, restart_failure_prob=1.0,
                         watchdog=False)
    schedule = apply_faults(_day_hours(3), 3, params, np.random.default_rng(2))
    # without the watchdog the app stays down until the midnight reboot
    assert len(schedule.crashes) == 3
    assert [c.restored_at for c in schedule.crashes] == [DAY_S, 2 * DAY_S, 3 * DAY_S]


def test_dead_watch_days():
    params = FaultParams(charge_failure_prob=1.0, crash_prob_per_hour=1.0)
    schedule = apply_faults(_day_hours(2), 2, params, np.random.default_rng(3))
    assert schedule.charge_failure_days == frozenset({0, 1})
    assert schedule.crashes == ()
    assert schedule.watch_dead(DAY_S + 5)


def test_outages_are_sorted_and_disjoint():
    params = FaultParams(internet_outage_prob_per_day=1.0, internet_outage_mean_min=600.0,
                         server_hangup_prob_per_day=1.0)
    schedule = apply_faults(_day_hours(10), 10, params, np.random.default_rng(4))
    spans = schedule.internet_outages
    assert spans
    assert all(e - s >= 60 for s, e in spans)
    assert all(e0 < s1 for (_, e0), (s1, _) in zip(spans, spans[1:]))
    assert all(e - s >= 120 * 60 for s, e in schedule.server_hangups)
    s, e = spans[0]
    assert schedule.internet_down_during(s - 10, s + 1)
    assert not schedule.internet_down_during(e, e + 1)


def test_same_stream_same_schedule():
    params = FaultParams(crash_prob_per_hour=0.2, internet_outage_prob_per_day=0.5)
    a = apply_faults(_day_hours(5), 5, params, np.random.default_rng([7, 0, 1]))
    b = apply_faults(_day_hours(5), 5, params, np.random.default_rng([7, 0, 1]))
    assert a == b
