import numpy as np
import pytest

from errors import DomainError, InvalidTransition
from session import (HOUR_S, Action, ActionKind, EventKind, Phase, RecordingKind, RecordingRecord, Role,
                     SelfReport, SessionEvent, SessionState, TimingConfig, advance, backup_due, classify_kind,
                     eligible_to_start, minute_of_hour, restart, retain, timer_id, trace_record)
from session_harness import SessionHarness

H = 9 * HOUR_S


def _apply(state, timing, *events):
    actions = []
    for kind, at, *tid in events:
        state, actions = advance(state, SessionEvent(kind, at, tid[0] if tid else None), timing)
    return state, actions


def _kinds(actions):
    return [a.kind for a in actions]


def _recording(timing, at=H + 600):
    state, _ = _apply(SessionState(), timing,
                      (EventKind.HOUR_START, H),
                      (EventKind.PROXIMITY_MET, at),
                      (EventKind.SPEECH_DETECTED, at))
    return state


def test_hour_start_scans_and_arms_the_backup(timing):
    state, actions = advance(SessionState(), SessionEvent(EventKind.HOUR_START, H), timing)
    assert state.phase is Phase.SCANNING
    assert actions == [Action(ActionKind.START_SCAN),
                       Action(ActionKind.SCHEDULE_TIMER, timer_id('backup', H + 2640), H + 2640)]


def test_hour_start_must_sit_on_a_boundary(timing):
    with pytest.raises(DomainError):
        advance(SessionState(), SessionEvent(EventKind.HOUR_START, H + 5), timing)


def test_idle_only_accepts_hour_start(timing):
    with pytest.raises(InvalidTransition):
        advance(SessionState(), SessionEvent(EventKind.PROXIMITY_MET, H), timing)


def test_events_may_not_run_backwards(timing):
    with pytest.raises(DomainError):
        advance(SessionState(), SessionEvent(EventKind.HOUR_START, H), timing, clock=H + 1)


def test_proximity_then_speech_starts_a_triggered_recording(timing):
    state, actions = _apply(SessionState(), timing, (EventKind.HOUR_START, H), (EventKind.PROXIMITY_MET, H + 600))
    assert state.phase is Phase.VAD_LISTENING
    assert _kinds(actions) == [ActionKind.CONNECT_PEER, ActionKind.START_VAD]
    state, actions = advance(state, SessionEvent(EventKind.SPEECH_DETECTED, H + 605), timing)
    assert str(state) == f"Recording(Triggered, {H + 605})"
    assert _kinds(actions) == [ActionKind.START_RECORDING, ActionKind.START_PEER_RECORDING]
    assert state.timers == ()


def test_speech_outside_listening_is_rejected(timing):
    state, _ = advance(SessionState(), SessionEvent(EventKind.HOUR_START, H), timing)
    with pytest.raises(InvalidTransition):
        advance(state, SessionEvent(EventKind.SPEECH_DETECTED, H + 10), timing)


def test_recording_complete_sends_the_first_alert(timing):
    state = _recording(timing)
    state, actions = advance(state, SessionEvent(EventKind.RECORDING_COMPLETE, H + 900), timing)
    assert str(state) == f"AwaitingSelfReport(1, {H + 1140})"
    assert actions == [Action(ActionKind.VIBRATE), Action(ActionKind.SEND_RECORDING_DONE_INTENT),
                       Action(ActionKind.SCHEDULE_TIMER, timer_id('alert2', H + 1020), H + 1020)]
    assert state.records == (RecordingRecord(H + 600, H + 900, RecordingKind.TRIGGERED,
                                             selfreport=SelfReport.TRIGGERED),)


def test_unanswered_handshake_vibrates_twice_then_deletes(timing):
    state = _recording(timing)
    state, _ = _apply(state, timing, (EventKind.RECORDING_COMPLETE, H + 900))
    state, actions = advance(state, SessionEvent(EventKind.TIMER_FIRED, H + 1020, timer_id('alert2', H + 1020)),
                             timing)
    assert state.alerts_sent == 2
    assert actions == [Action(ActionKind.VIBRATE),
                       Action(ActionKind.SCHEDULE_TIMER, timer_id('expire', H + 1140), H + 1140)]
    state, actions = advance(state, SessionEvent(EventKind.TIMER_FIRED, H + 1140, timer_id('expire', H + 1140)),
                             timing)
    assert state.phase is Phase.SCANNING
    assert actions[0] == Action(ActionKind.DELETE_AUDIO)
    # the gap from the deleted recording still holds the backup back
    assert actions[1] == Action(ActionKind.SCHEDULE_TIMER, timer_id('backup', H + 2640), H + 2640)
    assert state.records[-1].selfreport is SelfReport.EXPIRED
    assert not state.records[-1].retained


def test_started_self_report_retains_the_audio(timing):
    state = _recording(timing)
    state, actions = _apply(state, timing, (EventKind.RECORDING_COMPLETE, H + 900),
                            (EventKind.SELF_REPORT_STARTED, H + 960))
    assert state.phase is Phase.HOUR_DONE
    assert actions == [Action(ActionKind.RETAIN_AUDIO)]
    assert state.records[-1].retained
    state, actions = advance(state, SessionEvent(EventKind.SELF_REPORT_COMPLETED, H + 1100), timing)
    assert actions == []
    assert state.records[-1].selfreport is SelfReport.COMPLETED


def test_stale_timer_is_ignored(timing):
    state = _recording(timing)
    state, _ = _apply(state, timing, (EventKind.RECORDING_COMPLETE, H + 900), (EventKind.SELF_REPORT_STARTED, H + 960))
    after, actions = advance(state, SessionEvent(EventKind.TIMER_FIRED, H + 1020, timer_id('alert2', H + 1020)),
                             timing)
    assert after == state
    assert actions == []


def test_connect_failed_mid_recording_changes_nothing(timing):
    state = _recording(timing)
    after, actions = advance(state, SessionEvent(EventKind.CONNECT_FAILED, H + 700), timing)
    assert after == state
    assert actions == []


def test_connect_failed_while_listening_resumes_scanning(timing):
    state, _ = _apply(SessionState(), timing, (EventKind.HOUR_START, H), (EventKind.PROXIMITY_MET, H + 60))
    state, actions = advance(state, SessionEvent(EventKind.CONNECT_FAILED, H + 65), timing)
    assert state.phase is Phase.SCANNING
    assert actions == [Action(ActionKind.START_SCAN)]


def test_closeness_inside_the_gap_waits_connected(timing):
    state = _recording(timing, at=H + 60)
    state, _ = _apply(state, timing, (EventKind.RECORDING_COMPLETE, H + 360),
                      (EventKind.TIMER_FIRED, H + 480, timer_id('alert2', H + 480)),
                      (EventKind.TIMER_FIRED, H + 600, timer_id('expire', H + 600)))
    state, actions = advance(state, SessionEvent(EventKind.PROXIMITY_MET, H + 700), timing)
    assert state.phase is Phase.CONNECTED
    assert actions[1] == Action(ActionKind.SCHEDULE_TIMER, timer_id('gap', H + 1260), H + 1260)
    state, actions = advance(state, SessionEvent(EventKind.TIMER_FIRED, H + 1260, timer_id('gap', H + 1260)),
                             timing)
    assert state.phase is Phase.VAD_LISTENING
    assert actions == [Action(ActionKind.START_VAD)]


def test_gap_can_be_lifted_after_a_failed_handshake():
    lenient = TimingConfig(enforce_gap_after_failed_handshake=False)
    state = _recording(lenient, at=H + 60)
    state, _ = _apply(state, lenient, (EventKind.RECORDING_COMPLETE, H + 360),
                      (EventKind.TIMER_FIRED, H + 480, timer_id('alert2', H + 480)),
                      (EventKind.TIMER_FIRED, H + 600, timer_id('expire', H + 600)))
    assert state.last_recording_start is None
    state, _ = _apply(state, lenient, (EventKind.PROXIMITY_MET, H + 700))
    assert state.phase is Phase.VAD_LISTENING


def test_backup_timer_starts_a_backup_recording(timing):
    state, _ = advance(SessionState(), SessionEvent(EventKind.HOUR_START, H), timing)
    state, actions = advance(state, SessionEvent(EventKind.TIMER_FIRED, H + 2640, timer_id('backup', H + 2640)),
                             timing)
    assert str(state) == f"Recording(Backup, {H + 2640})"
    assert _kinds(actions) == [ActionKind.START_BACKUP_RECORDING, ActionKind.START_PEER_RECORDING]


def test_backup_time_event_respects_retention(timing):
    state = _recording(timing)
    state, _ = _apply(state, timing, (EventKind.RECORDING_COMPLETE, H + 900), (EventKind.SELF_REPORT_STARTED, H + 960))
    assert not backup_due(state, H + 2700, timing)
    after, actions = advance(state, SessionEvent(EventKind.BACKUP_TIME_REACHED, H + 2700), timing)
    assert actions == []
    assert after.phase is Phase.HOUR_DONE


def test_hour_end_aborts_a_running_recording(timing):
    state = _recording(timing, at=H + 3300)
    state, actions = advance(state, SessionEvent(EventKind.HOUR_END, H + HOUR_S), timing)
    assert state.phase is Phase.IDLE
    assert actions == [Action(ActionKind.DELETE_AUDIO)]
    assert state.records == ()


def test_recording_must_fit_in_the_hour(timing):
    state, _ = _apply(SessionState(), timing, (EventKind.HOUR_START, H), (EventKind.PROXIMITY_MET, H + 3301))
    after, actions = advance(state, SessionEvent(EventKind.SPEECH_DETECTED, H + 3301), timing)
    assert actions == []
    assert after.phase is Phase.VAD_LISTENING


def test_gap_carries_across_the_hour_boundary(timing):
    state = _recording(timing, at=H + 3000)
    state, _ = _apply(state, timing, (EventKind.RECORDING_COMPLETE, H + 3300), (EventKind.SELF_REPORT_STARTED, H + 3310),
                      (EventKind.HOUR_END, H + HOUR_S), (EventKind.HOUR_START, H + HOUR_S),
                      (EventKind.PROXIMITY_MET, H + HOUR_S + 300))
    assert state.phase is Phase.CONNECTED
    state, _ = _apply(state, timing, (EventKind.CONNECT_FAILED, H + HOUR_S + 301),
                      (EventKind.PROXIMITY_MET, H + HOUR_S + 600))
    assert state.phase is Phase.VAD_LISTENING


@pytest.mark.parametrize('delta, expected', [(1199, False), (1200, True), (1201, True)])
def test_gap_is_inclusive(timing, delta, expected):
    assert eligible_to_start(H + delta, H, timing) is expected
    assert eligible_to_start(H, None, timing)


def test_minute_44_is_the_backup_boundary():
    assert minute_of_hour(H + 2639) == 43
    assert classify_kind(H + 2639) is RecordingKind.TRIGGERED
    assert classify_kind(H + 2640) is RecordingKind.BACKUP


def test_retain_keeps_only_the_answered_last_recording():
    first = RecordingRecord(60, 360, RecordingKind.TRIGGERED, selfreport=SelfReport.STARTED)
    last = RecordingRecord(2640, 2940, RecordingKind.BACKUP, selfreport=SelfReport.COMPLETED)
    kept = retain([last, first])
    assert [r.retained for r in kept] == [False, True]
    assert retain([]) == []
    assert not retain([RecordingRecord(0, 300, RecordingKind.TRIGGERED, selfreport=SelfReport.EXPIRED)])[0].retained


def test_backup_minute_must_leave_room_to_record():
    with pytest.raises(DomainError):
        TimingConfig(backup_minute=58)
    with pytest.raises(DomainError):
        TimingConfig(min_gap=0)


def test_restart_during_a_recording_loses_it(timing):
    state = _recording(timing)
    state, actions = restart(state, H + 800, timing)
    assert state.phase is Phase.SCANNING
    assert _kinds(actions) == [ActionKind.DELETE_AUDIO, ActionKind.START_SCAN, ActionKind.SCHEDULE_TIMER]
    assert actions[-1].at == H + 2640
    assert state.last_recording_start == H + 600


def test_restart_in_a_later_hour_waits_for_the_next_boundary(timing):
    state = _recording(timing)
    state, actions = restart(state, H + HOUR_S + 10, timing)
    assert state.phase is Phase.IDLE
    assert actions == [Action(ActionKind.DELETE_AUDIO)]


def test_restart_after_retention_stays_done(timing):
    state = _recording(timing)
    state, _ = _apply(state, timing, (EventKind.RECORDING_COMPLETE, H + 900), (EventKind.SELF_REPORT_STARTED, H + 960))
    after, actions = restart(state, H + 1000, timing)
    assert after.phase is Phase.HOUR_DONE
    assert actions == []


def test_peripheral_mirrors_the_central(timing):
    state = SessionState(role=Role.PERIPHERAL)
    state, actions = advance(state, SessionEvent(EventKind.HOUR_START, H), timing)
    assert _kinds(actions) == [ActionKind.START_ADVERTISE, ActionKind.SCHEDULE_TIMER]
    state, _ = advance(state, SessionEvent(EventKind.PROXIMITY_MET, H + 600), timing)
    state, actions = advance(state, SessionEvent(EventKind.PEER_RECORDING_REQUESTED, H + 605), timing)
    assert actions == [Action(ActionKind.START_RECORDING)]
    state, actions = advance(state, SessionEvent(EventKind.RECORDING_COMPLETE, H + 905), timing)
    assert state.phase is Phase.SCANNING
    # it recorded this hour, so its own backup stays quiet
    state, actions = advance(state, SessionEvent(EventKind.TIMER_FIRED, H + 2640, timer_id('backup', H + 2640)),
                             timing)
    assert actions == []


def test_peripheral_backup_when_nothing_recorded(timing):
    state, _ = advance(SessionState(role=Role.PERIPHERAL), SessionEvent(EventKind.HOUR_START, H), timing)
    state, actions = advance(state, SessionEvent(EventKind.TIMER_FIRED, H + 2640, timer_id('backup', H + 2640)),
                             timing)
    assert actions == [Action(ActionKind.START_BACKUP_RECORDING)]
    state, actions = advance(state, SessionEvent(EventKind.HOUR_END, H + HOUR_S), timing)
    assert actions == [Action(ActionKind.DELETE_AUDIO)]


def test_trace_record_format(timing):
    before = SessionState()
    event = SessionEvent(EventKind.HOUR_START, H)
    after, actions = advance(before, event, timing)
    line = trace_record(H, before, event, after, actions, couple_id='c01')
    assert line == {'t': H, 'before': 'Idle', 'event': 'HourStart', 'after': 'Scanning',
                    'actions': ['StartScan', f"ScheduleTimer(backup:{H + 2640})"], 'couple': 'c01'}


def _random_hours(rng):
    """Closeness ticks and self-report answers for two or three consecutive hours"""
    hours = []
    first = int(rng.integers(0, 20)) * HOUR_S
    for h in range(int(rng.integers(2, 4))):
        start = first + h * HOUR_S
        n = int(rng.integers(0, 6))
        seconds = np.sort(rng.choice(HOUR_S, size=n, replace=False))
        hours.append((start, [(start + int(s), bool(rng.random() < 0.7)) for s in seconds]))
    return hours


def _random_responder(rng):
    def respond(end, index):
        u = rng.random()
        if u < 0.4:
            return []
        delay = int(rng.integers(1, 240))
        if u < 0.7:
            reports = [(end + delay, EventKind.SELF_REPORT_STARTED)]
            if rng.random() < 0.5:
                reports.append((end + delay + 30, EventKind.SELF_REPORT_COMPLETED))
            return reports
        return [(end + delay, EventKind.SELF_REPORT_COMPLETED)]
    return respond


def test_random_hours_keep_the_hourly_rules(timing):
    checked = 0
    for seed in range(10_000):
        rng = np.random.default_rng(seed)
        harness = SessionHarness(timing, _random_responder(rng))
        try:
            for start, ticks in _random_hours(rng):
                harness.run_hour(start, ticks)
        except InvalidTransition:
            continue
        checked += 1

        starts = [t for t, _ in harness.starts]
        assert all(b - a >= timing.min_gap for a, b in zip(starts, starts[1:]))
        for t, kind in harness.starts:
            if kind == 'Backup':
                assert minute_of_hour(t) >= timing.backup_minute

        for hour_start, records in harness.hours:
            kept = [r for r in records if r.retained]
            assert len(kept) <= 1
            assert all(r.selfreport in (SelfReport.STARTED, SelfReport.COMPLETED) for r in kept)
            # nothing from the previous hour can still hold the gap at minute 44
            before_44 = [t for t in starts if hour_start <= t < hour_start + 2640]
            if not before_44:
                assert (hour_start + 2640, 'Backup') in harness.starts

        for intent in harness.intents:
            answered = any(intent < r < intent + timing.first_alert_wait for r in harness.reports)
            hour_end = (intent // HOUR_S + 1) * HOUR_S
            if not answered and intent + timing.first_alert_wait < hour_end:
                assert intent + timing.first_alert_wait in harness.vibrations
    assert checked > 8500
