"""
Per-hour trigger state machine for a watch pair.

The central watch scans, connects, listens for speech, records for five
minutes and then runs the self-report handshake; unanswered handshakes delete
the audio and let the hour try again. A backup recording starts from minute 44
when nothing was collected. The peripheral runs a reduced mirror.

Every transition is a pure function of (state, event, timing); actions come
back as an ordered list for the caller to execute.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from errors import DomainError, InvalidTransition

logger = logging.getLogger(__name__)

HOUR_S = 3600

BACKUP_TIMER = 'backup'
GAP_TIMER = 'gap'
ALERT2_TIMER = 'alert2'
EXPIRE_TIMER = 'expire'


@dataclass(frozen=True)
class TimingConfig:
    """Virtual-clock durations in seconds; backup_minute is a minute of the hour"""
    record_duration: int = 5 * 60
    first_alert_wait: int = 2 * 60
    second_alert_wait: int = 2 * 60
    min_gap: int = 20 * 60
    backup_minute: int = 44
    selfreport_expiry: int = 4 * 60
    eod_expiry: int = 45 * 60
    hour_grace: int = 0
    enforce_gap_after_failed_handshake: bool = True

    def __post_init__(self):
        for name in ('record_duration', 'first_alert_wait', 'second_alert_wait', 'min_gap',
                     'selfreport_expiry', 'eod_expiry'):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if not 0 <= self.backup_minute < 60 or self.hour_grace < 0:
            raise DomainError("backup_minute must be a minute of the hour and hour_grace non-negative")
        if self.backup_minute * 60 + self.record_duration > HOUR_S + self.hour_grace:
            raise DomainError("a backup recording must fit in the hour")

    @classmethod
    def from_config(cls, config) -> 'TimingConfig':
        return cls(
            record_duration=config.RECORD_DURATION_S,
            first_alert_wait=config.FIRST_ALERT_WAIT_S,
            second_alert_wait=config.SECOND_ALERT_WAIT_S,
            min_gap=config.MIN_GAP_S,
            backup_minute=config.BACKUP_MINUTE,
            selfreport_expiry=config.SELFREPORT_EXPIRY_S,
            eod_expiry=config.EOD_EXPIRY_S,
        )


class Role(Enum):
    CENTRAL = 'Central'
    PERIPHERAL = 'Peripheral'


class Phase(Enum):
    IDLE = 'Idle'
    SCANNING = 'Scanning'
    CONNECTED = 'Connected'
    VAD_LISTENING = 'VadListening'
    RECORDING = 'Recording'
    AWAITING_SELF_REPORT = 'AwaitingSelfReport'
    HOUR_DONE = 'HourDone'


class RecordingKind(Enum):
    TRIGGERED = 'Triggered'
    BACKUP = 'Backup'


class SelfReport(Enum):
    NOT_TRIGGERED = 'NotTriggered'
    TRIGGERED = 'Triggered'
    STARTED = 'Started'
    COMPLETED = 'Completed'
    EXPIRED = 'Expired'


class EventKind(Enum):
    HOUR_START = 'HourStart'
    PROXIMITY_MET = 'ProximityMet'
    CONNECT_FAILED = 'ConnectFailed'
    SPEECH_DETECTED = 'SpeechDetected'
    RECORDING_COMPLETE = 'RecordingComplete'
    SELF_REPORT_STARTED = 'SelfReportStarted'
    SELF_REPORT_COMPLETED = 'SelfReportCompleted'
    TIMER_FIRED = 'TimerFired'
    BACKUP_TIME_REACHED = 'BackupTimeReached'
    HOUR_END = 'HourEnd'
    # peripheral only: the central's StartPeerRecording arrived
    PEER_RECORDING_REQUESTED = 'PeerRecordingRequested'


class ActionKind(Enum):
    START_SCAN = 'StartScan'
    START_ADVERTISE = 'StartAdvertise'
    CONNECT_PEER = 'ConnectPeer'
    START_VAD = 'StartVad'
    START_RECORDING = 'StartRecording'
    START_PEER_RECORDING = 'StartPeerRecording'
    VIBRATE = 'Vibrate'
    SEND_RECORDING_DONE_INTENT = 'SendRecordingDoneIntent'
    DELETE_AUDIO = 'DeleteAudio'
    RETAIN_AUDIO = 'RetainAudio'
    SCHEDULE_TIMER = 'ScheduleTimer'
    START_BACKUP_RECORDING = 'StartBackupRecording'


@dataclass(frozen=True)
class SessionEvent:
    kind: EventKind
    at: int
    timer_id: Optional[str] = None


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    timer_id: Optional[str] = None
    at: Optional[int] = None

    def __str__(self):
        if self.kind is ActionKind.SCHEDULE_TIMER:
            return f"ScheduleTimer({self.timer_id})"
        return self.kind.value


@dataclass(frozen=True)
class RecordingRecord:
    start: int
    end: Optional[int]
    kind: RecordingKind
    retained: bool = False
    selfreport: SelfReport = SelfReport.NOT_TRIGGERED


@dataclass(frozen=True)
class SessionState:
    phase: Phase = Phase.IDLE
    role: Role = Role.CENTRAL
    hour_start: Optional[int] = None
    recording_kind: Optional[RecordingKind] = None
    recording_started_at: Optional[int] = None
    alerts_sent: int = 0
    deadline: Optional[int] = None
    last_recording_start: Optional[int] = None
    # gap anchor in force before the current recording started
    previous_anchor: Optional[int] = None
    backup_missed: bool = False
    records: Tuple[RecordingRecord, ...] = ()
    timers: Tuple[str, ...] = ()

    @property
    def recordings_this_hour(self) -> int:
        return len(self.records)

    def __str__(self):
        if self.phase is Phase.RECORDING:
            return f"Recording({self.recording_kind.value}, {self.recording_started_at})"
        if self.phase is Phase.AWAITING_SELF_REPORT:
            return f"AwaitingSelfReport({self.alerts_sent}, {self.deadline})"
        return self.phase.value


def timer_id(name: str, at: int) -> str:
    return f"{name}:{at}"


def timer_name(tid: str) -> str:
    return tid.split(':', 1)[0]


def minute_of_hour(t: int) -> int:
    return (t % HOUR_S) // 60


def classify_kind(start: int, backup_minute: int = 44) -> RecordingKind:
    return RecordingKind.BACKUP if minute_of_hour(start) >= backup_minute else RecordingKind.TRIGGERED


def eligible_to_start(now: int, last_recording_start: Optional[int], config: TimingConfig) -> bool:
    """Start-to-start minimum gap, inclusive at exactly min_gap"""
    return last_recording_start is None or now - last_recording_start >= config.min_gap


def backup_due(state: SessionState, clock: int, config: TimingConfig) -> bool:
    if state.hour_start is None or not state.hour_start <= clock < _hour_end(state, config):
        return False
    if minute_of_hour(clock) < config.backup_minute:
        return False
    if state.phase is Phase.RECORDING:
        return False
    return not any(r.retained for r in state.records)


def retain(hour_records: Sequence[RecordingRecord]) -> List[RecordingRecord]:
    """Only the last recording of the hour may be kept, and only if its self-report was at least started"""
    if not hour_records:
        return []
    ordered = sorted(hour_records, key=lambda r: r.start)
    out = [replace(r, retained=False) for r in ordered[:-1]]
    last = ordered[-1]
    out.append(replace(last, retained=last.selfreport in (SelfReport.STARTED, SelfReport.COMPLETED)))
    return out


def _hour_end(state: SessionState, config: TimingConfig) -> int:
    return state.hour_start + HOUR_S + config.hour_grace


def _fits(state: SessionState, at: int, config: TimingConfig) -> bool:
    return at + config.record_duration <= _hour_end(state, config)


def _gap_open(state: SessionState, config: TimingConfig) -> int:
    if state.last_recording_start is None:
        return state.hour_start
    return state.last_recording_start + config.min_gap


def _arm(state: SessionState, name: str, at: int) -> Tuple[SessionState, Action]:
    tid = timer_id(name, at)
    return replace(state, timers=state.timers + (tid,)), Action(ActionKind.SCHEDULE_TIMER, tid, at)


def _disarm(state: SessionState, *names: str) -> SessionState:
    return replace(state, timers=tuple(t for t in state.timers if timer_name(t) not in names))


def _arm_backup(state: SessionState, now: int, config: TimingConfig) -> Tuple[SessionState, List[Action]]:
    at = max(state.hour_start + config.backup_minute * 60, _gap_open(state, config), now)
    if not _fits(state, at, config):
        return state, []
    state, action = _arm(state, BACKUP_TIMER, at)
    return state, [action]


def _start_recording(state: SessionState, at: int, kind: RecordingKind,
                     first_action: ActionKind) -> Tuple[SessionState, List[Action]]:
    state = _disarm(state, GAP_TIMER, BACKUP_TIMER)
    state = replace(state, phase=Phase.RECORDING, recording_kind=kind, recording_started_at=at,
                    previous_anchor=state.last_recording_start, last_recording_start=at)
    return state, [Action(first_action), Action(ActionKind.START_PEER_RECORDING)]


def _update_last(state: SessionState, **changes) -> SessionState:
    last = replace(state.records[-1], **changes)
    return replace(state, records=state.records[:-1] + (last,))


def _expire(state: SessionState, config: TimingConfig) -> SessionState:
    """Close the pending handshake as Expired; the audio is gone"""
    state = _update_last(state, selfreport=SelfReport.EXPIRED, retained=False)
    state = _disarm(state, ALERT2_TIMER, EXPIRE_TIMER)
    if not config.enforce_gap_after_failed_handshake:
        state = replace(state, last_recording_start=state.previous_anchor)
    return replace(state, alerts_sent=0, deadline=None)


def advance(state: SessionState, event: SessionEvent, config: TimingConfig,
            clock: Optional[int] = None) -> Tuple[SessionState, List[Action]]:
    """
    Apply one event to the session state
    Args:
        state: Current state
        event: Event timestamped on the virtual clock
        config: Timing configuration
        clock: Current clock position; the event may not lie before it
    Returns:
        (new state, ordered actions)
    """
    if clock is not None and event.at < clock:
        raise DomainError(f"event at {event.at} precedes the clock at {clock}")
    if state.role is Role.PERIPHERAL:
        return advance_peripheral(state, event, config)

    kind = event.kind
    phase = state.phase
    now = event.at

    if kind is EventKind.TIMER_FIRED:
        if event.timer_id not in state.timers:
            logger.debug(f"Dropping stale timer {event.timer_id} at {now}")
            return state, []
        state = replace(state, timers=tuple(t for t in state.timers if t != event.timer_id))
        return _on_timer(state, timer_name(event.timer_id), now, config)

    if phase is Phase.IDLE:
        if kind is not EventKind.HOUR_START:
            raise InvalidTransition(phase.value, kind.value)
        if now % HOUR_S:
            raise DomainError(f"HourStart at {now} is not on an hour boundary")
        state = replace(state, phase=Phase.SCANNING, hour_start=now, records=(), timers=(),
                        alerts_sent=0, deadline=None, backup_missed=False,
                        recording_kind=None, recording_started_at=None)
        state, timer_actions = _arm_backup(state, now, config)
        return state, [Action(ActionKind.START_SCAN)] + timer_actions

    if kind is EventKind.HOUR_END:
        return _end_hour(state, config)

    if kind is EventKind.PROXIMITY_MET and phase is Phase.SCANNING:
        if eligible_to_start(now, state.last_recording_start, config):
            return replace(state, phase=Phase.VAD_LISTENING), [Action(ActionKind.CONNECT_PEER),
                                                               Action(ActionKind.START_VAD)]
        state = replace(state, phase=Phase.CONNECTED)
        state, action = _arm(state, GAP_TIMER, _gap_open(state, config))
        return state, [Action(ActionKind.CONNECT_PEER), action]

    if kind is EventKind.CONNECT_FAILED:
        if phase in (Phase.SCANNING, Phase.CONNECTED, Phase.VAD_LISTENING):
            state = _disarm(state, GAP_TIMER)
            return replace(state, phase=Phase.SCANNING), [Action(ActionKind.START_SCAN)]
        # both watches record on their own once started
        return state, []

    if kind is EventKind.SPEECH_DETECTED:
        if phase is Phase.VAD_LISTENING or (
                phase is Phase.CONNECTED and eligible_to_start(now, state.last_recording_start, config)):
            if not _fits(state, now, config) or not eligible_to_start(now, state.last_recording_start, config):
                return state, []
            return _start_recording(state, now, classify_kind(now, config.backup_minute),
                                    ActionKind.START_RECORDING)
        raise InvalidTransition(str(state), kind.value)

    if kind is EventKind.BACKUP_TIME_REACHED:
        if phase in (Phase.SCANNING, Phase.CONNECTED, Phase.VAD_LISTENING):
            if (backup_due(state, now, config) and eligible_to_start(now, state.last_recording_start, config)
                    and _fits(state, now, config)):
                return _start_recording(state, now, RecordingKind.BACKUP, ActionKind.START_BACKUP_RECORDING)
            return state, []
        if phase in (Phase.RECORDING, Phase.AWAITING_SELF_REPORT, Phase.HOUR_DONE):
            return state, []
        raise InvalidTransition(str(state), kind.value)

    if kind is EventKind.RECORDING_COMPLETE and phase is Phase.RECORDING:
        record = RecordingRecord(state.recording_started_at, now, state.recording_kind,
                                 retained=False, selfreport=SelfReport.TRIGGERED)
        state = replace(state, phase=Phase.AWAITING_SELF_REPORT, records=state.records + (record,),
                        recording_kind=None, recording_started_at=None, alerts_sent=1,
                        deadline=now + config.first_alert_wait + config.second_alert_wait)
        state, action = _arm(state, ALERT2_TIMER, now + config.first_alert_wait)
        return state, [Action(ActionKind.VIBRATE), Action(ActionKind.SEND_RECORDING_DONE_INTENT), action]

    if kind in (EventKind.SELF_REPORT_STARTED, EventKind.SELF_REPORT_COMPLETED):
        outcome = SelfReport.STARTED if kind is EventKind.SELF_REPORT_STARTED else SelfReport.COMPLETED
        if phase is Phase.AWAITING_SELF_REPORT:
            state = _disarm(state, ALERT2_TIMER, EXPIRE_TIMER)
            state = _update_last(state, selfreport=outcome, retained=True)
            state = replace(state, phase=Phase.HOUR_DONE, alerts_sent=0, deadline=None)
            return state, [Action(ActionKind.RETAIN_AUDIO)]
        if (phase is Phase.HOUR_DONE and outcome is SelfReport.COMPLETED
                and state.records and state.records[-1].selfreport is SelfReport.STARTED):
            return _update_last(state, selfreport=SelfReport.COMPLETED), []
        raise InvalidTransition(str(state), kind.value)

    raise InvalidTransition(str(state), kind.value)


def _on_timer(state: SessionState, name: str, now: int, config: TimingConfig) -> Tuple[SessionState, List[Action]]:
    phase = state.phase

    if name == GAP_TIMER:
        if phase is Phase.CONNECTED:
            return replace(state, phase=Phase.VAD_LISTENING), [Action(ActionKind.START_VAD)]
        return state, []

    if name == BACKUP_TIMER:
        if phase in (Phase.RECORDING, Phase.AWAITING_SELF_REPORT):
            return replace(state, backup_missed=True), []
        if phase not in (Phase.SCANNING, Phase.CONNECTED, Phase.VAD_LISTENING):
            return state, []
        if not backup_due(state, now, config):
            return state, []
        if eligible_to_start(now, state.last_recording_start, config):
            if _fits(state, now, config):
                return _start_recording(state, now, RecordingKind.BACKUP, ActionKind.START_BACKUP_RECORDING)
            return state, []
        return _arm_backup(state, now, config)

    if name == ALERT2_TIMER and phase is Phase.AWAITING_SELF_REPORT and state.alerts_sent == 1:
        state = replace(state, alerts_sent=2)
        state, action = _arm(state, EXPIRE_TIMER, now + config.second_alert_wait)
        return state, [Action(ActionKind.VIBRATE), action]

    if name == EXPIRE_TIMER and phase is Phase.AWAITING_SELF_REPORT and state.alerts_sent == 2:
        # nothing kept this hour, so the backup is due again once the gap opens
        state = replace(_expire(state, config), phase=Phase.SCANNING, backup_missed=False)
        actions = [Action(ActionKind.DELETE_AUDIO)]
        if backup_due(state, max(now, state.hour_start + config.backup_minute * 60), config):
            state, timer_actions = _arm_backup(state, now, config)
            actions += timer_actions
        return state, actions

    return state, []


def _end_hour(state: SessionState, config: TimingConfig) -> Tuple[SessionState, List[Action]]:
    actions = []
    if state.phase is Phase.RECORDING:
        # aborted recording: audio never reaches the handshake
        state = replace(state, recording_kind=None, recording_started_at=None)
        actions.append(Action(ActionKind.DELETE_AUDIO))
    elif state.phase is Phase.AWAITING_SELF_REPORT:
        state = _expire(state, config)
        actions.append(Action(ActionKind.DELETE_AUDIO))
    state = replace(state, phase=Phase.IDLE, timers=(), alerts_sent=0, deadline=None, backup_missed=False)
    return state, actions


def advance_peripheral(state: SessionState, event: SessionEvent,
                       config: TimingConfig) -> Tuple[SessionState, List[Action]]:
    """
    Reduced mirror for the advertising watch: it records when the central asks
    and starts its own backup at minute 44 if it recorded nothing this hour.
    """
    kind = event.kind
    phase = state.phase
    now = event.at

    if kind is EventKind.TIMER_FIRED:
        if event.timer_id not in state.timers:
            return state, []
        state = replace(state, timers=tuple(t for t in state.timers if t != event.timer_id))
        if (timer_name(event.timer_id) == BACKUP_TIMER and phase in (Phase.SCANNING, Phase.CONNECTED)
                and not state.records and _fits(state, now, config)):
            state = replace(state, phase=Phase.RECORDING, recording_kind=RecordingKind.BACKUP,
                            recording_started_at=now, last_recording_start=now)
            return state, [Action(ActionKind.START_BACKUP_RECORDING)]
        return state, []

    if phase is Phase.IDLE:
        if kind is not EventKind.HOUR_START:
            raise InvalidTransition(phase.value, kind.value)
        state = replace(state, phase=Phase.SCANNING, hour_start=now, records=(), timers=(),
                        recording_kind=None, recording_started_at=None)
        actions = [Action(ActionKind.START_ADVERTISE)]
        at = now + config.backup_minute * 60
        if _fits(state, at, config):
            state, action = _arm(state, BACKUP_TIMER, at)
            actions.append(action)
        return state, actions

    if kind is EventKind.HOUR_END:
        actions = [Action(ActionKind.DELETE_AUDIO)] if phase is Phase.RECORDING else []
        return replace(state, phase=Phase.IDLE, timers=(), recording_kind=None,
                       recording_started_at=None), actions

    if kind is EventKind.PROXIMITY_MET and phase is Phase.SCANNING:
        return replace(state, phase=Phase.CONNECTED), []

    if kind is EventKind.CONNECT_FAILED:
        if phase is Phase.CONNECTED:
            return replace(state, phase=Phase.SCANNING), [Action(ActionKind.START_ADVERTISE)]
        return state, []

    if kind is EventKind.PEER_RECORDING_REQUESTED:
        if phase in (Phase.SCANNING, Phase.CONNECTED):
            state = replace(state, phase=Phase.RECORDING,
                            recording_kind=classify_kind(now, config.backup_minute),
                            recording_started_at=now, last_recording_start=now)
            return state, [Action(ActionKind.START_RECORDING)]
        if phase is Phase.RECORDING:
            return state, []

    if kind is EventKind.RECORDING_COMPLETE and phase is Phase.RECORDING:
        record = RecordingRecord(state.recording_started_at, now, state.recording_kind)
        state = replace(state, phase=Phase.SCANNING, records=state.records + (record,),
                        recording_kind=None, recording_started_at=None)
        return state, [Action(ActionKind.START_ADVERTISE)]

    raise InvalidTransition(str(state), kind.value)


def restart(state: SessionState, clock: int, config: TimingConfig) -> Tuple[SessionState, List[Action]]:
    """
    Exception-restart path: the app comes back at `clock` after a crash.

    The gap anchor and the hour's closed records survive; an in-flight
    recording is lost and an open handshake counts as expired. A restart in a
    later hour than the crashed one leaves the app Idle until the next HourStart.
    """
    actions: List[Action] = []
    if state.phase is Phase.RECORDING:
        state = replace(state, recording_kind=None, recording_started_at=None)
        actions.append(Action(ActionKind.DELETE_AUDIO))
    elif state.phase is Phase.AWAITING_SELF_REPORT:
        state = _expire(state, config)
        actions.append(Action(ActionKind.DELETE_AUDIO))

    if state.hour_start is None or state.phase is Phase.IDLE or clock >= _hour_end(state, config):
        return replace(state, phase=Phase.IDLE, timers=(), alerts_sent=0, deadline=None,
                       backup_missed=False), actions
    if state.phase is Phase.HOUR_DONE:
        return replace(state, timers=()), actions

    state = replace(state, phase=Phase.SCANNING, timers=(), alerts_sent=0, deadline=None, backup_missed=False)
    if state.role is Role.PERIPHERAL:
        actions.append(Action(ActionKind.START_ADVERTISE))
        if not state.records:
            at = max(state.hour_start + config.backup_minute * 60, clock)
            if _fits(state, at, config):
                state, action = _arm(state, BACKUP_TIMER, at)
                actions.append(action)
        return state, actions
    actions.append(Action(ActionKind.START_SCAN))
    if backup_due(state, max(clock, state.hour_start + config.backup_minute * 60), config):
        state, timer_actions = _arm_backup(state, clock, config)
        actions += timer_actions
    return state, actions


def trace_record(at: int, before: SessionState, event: SessionEvent,
                 after: SessionState, actions: Sequence[Action], couple_id: Optional[str] = None) -> Dict:
    """One line of the state-machine trace export"""
    record = {
        't': at,
        'before': str(before),
        'event': event.kind.value if event.timer_id is None else f"{event.kind.value}({event.timer_id})",
        'after': str(after),
        'actions': [str(a) for a in actions],
    }
    if couple_id is not None:
        record['couple'] = couple_id
    return record
