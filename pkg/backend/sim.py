"""
Discrete-event simulation of a DyMand field study.

Every couple runs on its own seeded substreams over a virtual clock in whole
seconds (day 0 starts Monday 00:00). Within an availability hour the loop
jumps from one event to the next: recording ends, crashes, timers, message
deliveries, proximity changes, speech triggers, and finally HourEnd. Couples
are independent, so they run in parallel with joblib and are reduced in
couple order.
"""

import heapq
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import timedelta
from functools import lru_cache
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

import synth
import vad
from behavior import CoupleTrace, couple_rng, generate_trace
from escalation import afternoon_check, day_stats, diary_completed, end_of_day_check
from faults import FaultSchedule, apply_faults
from metrics import (CollectionCounts, StudyReport, build_report, collection_counts_from_logs,
                     expected_hours, percent, render_report, report_dict)
from obslog import (TALLY_FIELDS, BeforeStudyLog, BleLog, ConfigLog, ErrorLog, EscalationLog, EventTally, HourlyLog,
                    LogBundle, LogEntry, RecordingAnnotation, format_countdown, write_annotations, write_log_file)
from proximity import PathLossModel, ProximityConfig, lost_mask, predict_rssi, proximate_mask
from scenario import Scenario
from session import (ActionKind, EventKind, Phase, Role, SelfReport, SessionEvent, SessionState, TimingConfig,
                     advance, minute_of_hour, restart, trace_record)
from transport import (CENTRAL, PERIPHERAL, PHONE, BleConnectionState, BleOutcome, MessageFabric,
                       MessageKind, NotShown, ServerState, ble_connect, decode_payload, default_links,
                       deliver_config, make_message)

logger = logging.getLogger(__name__)

DAY_S = 86400
HOUR_S = 3600
CHUNK_S = 5

GROUND_TRUTH = 'ground-truth'
DSP = 'dsp'
MODES = (GROUND_TRUTH, DSP)

STREAM_RADIO = 2
STREAM_VAD = 3
STREAM_TRANSPORT = 4
STREAM_PEOPLE = 5
STREAM_POLICY = 6
STREAM_FAULTS = 1
STREAM_BEHAVIOR = 0


def _ceil_s(ms: int) -> int:
    return -(-int(ms) // 1000)


def _first_true(mask: np.ndarray, start: int, stop: int) -> Optional[int]:
    """Absolute index of the first True in mask[start:stop]"""
    if stop <= start:
        return None
    window = mask[start:stop]
    i = int(window.argmax())
    return start + i if window[i] else None


class GroundTruthVad:
    """
    Detector driven by ground truth: audible speech is detected per second
    with the configured hit probability, everything else false-alarms with a
    small probability (larger next to a running television).
    """

    def __init__(self, trace: CoupleTrace, scenario: Scenario, rng: np.random.Generator):
        params = scenario.vad
        n = len(trace)
        near = trace.distance <= scenario.behavior.hearing_range_m
        self.audible = trace.worn & (trace.a_speaking | (trace.b_speaking & near))
        self.ambient = rng.random(n) < scenario.behavior.ambient_noise_prob
        hit = rng.random(n) < params.hit_prob
        false_alarm = rng.random(n) < np.where(trace.tv_on, max(params.false_alarm_prob,
                                                                params.tv_false_alarm_prob),
                                               params.false_alarm_prob)
        self.detected = (self.audible & hit) | false_alarm
        self.nonsilent = self.audible | trace.tv_on | self.ambient | self.detected

    def next_trigger(self, vad_start: int, now: int, until: int) -> Optional[int]:
        """End of the first 5-second chunk (counted from vad_start) holding a detection, or None"""
        first = vad_start + CHUNK_S * ((now - vad_start) // CHUNK_S)
        hit = _first_true(self.detected, first, until)
        if hit is None:
            return None
        trigger = vad_start + CHUNK_S * ((hit - vad_start) // CHUNK_S + 1)
        return trigger if trigger < until else None

    def nonsilent_chunks(self, vad_start: int, stop: int) -> List[int]:
        n = (stop - vad_start) // CHUNK_S
        if n <= 0:
            return []
        chunks = self.nonsilent[vad_start:vad_start + n * CHUNK_S].reshape(n, CHUNK_S).any(axis=1)
        return [vad_start + CHUNK_S * int(k) for k in np.flatnonzero(chunks)]


class DspVad(GroundTruthVad):
    """Runs the real VAD on synthesized audio, one second at a time"""

    def __init__(self, trace: CoupleTrace, scenario: Scenario, rng: np.random.Generator,
                 model: vad.VadModel, index: int):
        super().__init__(trace, scenario, rng)
        self.trace = trace
        self.model = model
        self.seed = scenario.seed
        self.index = index
        self._chunks: Dict[int, Tuple[bool, bool]] = {}

    def _second(self, s: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, self.index, STREAM_VAD, s])
        if self.audible[s]:
            return synth.speech_like(rng)
        if self.trace.tv_on[s]:
            return 0.5 * synth.speech_like(rng)
        if self.ambient[s]:
            return synth.noise_like(rng)
        return synth.near_silence(rng)

    def _chunk(self, start: int) -> Tuple[bool, bool]:
        """(speech detected, any second above the silence threshold)"""
        if start not in self._chunks:
            audio = np.concatenate([self._second(s) for s in range(start, start + CHUNK_S)])
            detected = vad.detect_chunk(self.model, audio) is not None
            loud = any(vad.rms(sec) >= self.model.rms_threshold for sec in np.split(audio, CHUNK_S))
            self._chunks[start] = (detected, loud)
        return self._chunks[start]

    def next_trigger(self, vad_start: int, now: int, until: int) -> Optional[int]:
        start = vad_start + CHUNK_S * ((now - vad_start) // CHUNK_S)
        while start + CHUNK_S < until:
            if self._chunk(start)[0]:
                return start + CHUNK_S
            start += CHUNK_S
        return None

    def nonsilent_chunks(self, vad_start: int, stop: int) -> List[int]:
        n = (stop - vad_start) // CHUNK_S
        return [vad_start + CHUNK_S * k for k in range(max(0, n)) if self._chunk(vad_start + CHUNK_S * k)[1]]


@lru_cache(maxsize=4)
def default_dsp_model(seed: int, n_segments: int = 600) -> vad.VadModel:
    """Small model trained on the synthetic corpus, used when a scenario names no model file"""
    segments, labels = synth.make_corpus(n_segments, np.random.default_rng([seed, 99]))
    features, frame_labels = vad.segment_features(segments, labels, frames_per_segment=10)
    return vad.train(features, frame_labels, hyper_grid=(0.1, 1.0), folds=5, seed=seed)


@dataclass
class CoupleResult:
    couple_id: str
    logs: List[LogEntry]
    annotations: List[RecordingAnnotation]
    started: List[Tuple[int, str]]
    policy_hits: Dict[str, Tuple[int, int]]
    peripheral_recordings: int
    faults: Dict[str, int]
    not_shown: Dict[str, int]
    escalations: Dict[str, int]
    session_trace: List[Dict] = field(default_factory=list)
    transport_trace: List[Dict] = field(default_factory=list)


class CoupleSimulator:
    """One couple's study: both watches, the phone, the server and the participants"""

    def __init__(self, scenario: Scenario, index: int, mode: str = GROUND_TRUTH,
                 model: Optional[vad.VadModel] = None, timing: Optional[TimingConfig] = None,
                 record_trace: bool = False, ble_log_period_s: int = 60):
        self.scenario = scenario
        self.index = index
        self.couple = scenario.couples[index]
        self.couple_id = self.couple.couple_id
        self.timing = timing or TimingConfig()
        self.record_trace = record_trace
        self.ble_log_period_s = max(1, ble_log_period_s)
        seed = scenario.seed

        self.trace = generate_trace(self.couple, scenario, couple_rng(seed, index, STREAM_BEHAVIOR))
        self.active_hours = expected_hours(self.couple.availability, scenario.study_start, scenario.days)
        self.faults: FaultSchedule = apply_faults(self.active_hours, scenario.days, scenario.faults,
                                                  couple_rng(seed, index, STREAM_FAULTS))
        vad_rng = couple_rng(seed, index, STREAM_VAD)
        if mode == DSP:
            self.vad = DspVad(self.trace, scenario, vad_rng, model, index)
        else:
            self.vad = GroundTruthVad(self.trace, scenario, vad_rng)

        pl = scenario.path_loss
        self.path_loss = PathLossModel(pl.rssi_at_1m_dbm, pl.path_loss_exponent, pl.noise_std_db)
        self.proximity = ProximityConfig(pl.threshold_dbm, disconnect_dbm=pl.disconnect_dbm)
        self.radio_rng = couple_rng(seed, index, STREAM_RADIO)
        self.people = couple_rng(seed, index, STREAM_PEOPLE)

        tp = scenario.transport
        links = default_links(tp.ble_latency_ms, tp.data_layer_latency_ms, tp.internet_latency_ms,
                              tp.jitter_ms, tp.drop_prob,
                              [(s * 1000, e * 1000) for s, e in self.faults.internet_outages],
                              tp.store_and_forward)
        server = ServerState(tuple((s * 1000, e * 1000) for s, e in self.faults.server_hangups))
        self.fabric = MessageFabric(links, couple_rng(seed, index, STREAM_TRANSPORT), server)

        self.central = SessionState(role=Role.CENTRAL)
        self.peripheral = SessionState(role=Role.PERIPHERAL)
        self.ble = BleConnectionState()
        self.storage_mb = scenario.device.storage_mb
        self.down_until = 0
        self.crash_index = 0

        self.logs: List[LogEntry] = []
        self.annotations: List[RecordingAnnotation] = []
        self.started: List[Tuple[int, str]] = []
        self.peripheral_recordings = 0
        self.fault_tally = {'charge_failure_days': len(self.faults.charge_failure_days), 'crashes': 0,
                            'failed_restarts': 0, 'ble_stack_resets': 0,
                            'internet_outages': len(self.faults.internet_outages),
                            'server_hangups': len(self.faults.server_hangups), 'late_messages': 0}
        self.not_shown: Dict[str, int] = {}
        self.escalations: Dict[str, int] = {}
        self.session_trace: List[Dict] = []

    # -- study level ---------------------------------------------------------

    def run(self) -> CoupleResult:
        scenario = self.scenario
        setup_t = -scenario.setup_days * DAY_S
        self.logs.append(ConfigLog(self.couple_id, setup_t, scenario.study_start.isoformat(), scenario.days,
                                   self.couple.availability))
        acked, attempts = deliver_config(self.fabric, self.couple.availability.to_dict(), setup_t * 1000)
        if acked is None:
            self._error(setup_t, 'ConfigNotAcked', f"availability hours unacknowledged after {attempts} attempts")

        if self.couple.powered:
            for t in range(setup_t, 0, HOUR_S):
                self.logs.append(BeforeStudyLog(self.couple_id, t, self._battery(t), format_countdown(-t)))

        hours_by_day: Dict[int, List[int]] = {}
        for hour_start in self.active_hours:
            hours_by_day.setdefault(hour_start // DAY_S, []).append(hour_start)

        for d in range(scenario.days):
            completed = []
            if self.couple.powered and not self.faults.watch_dead(d * DAY_S):
                for hour_start in hours_by_day.get(d, []):
                    log = self._run_hour(hour_start)
                    if log is not None:
                        self.logs.append(log)
                        if log.selfreport_completed:
                            completed.append((hour_start % DAY_S) // HOUR_S)
            self._escalate(d, completed)

        policy_hits = self._policy_hits()
        logger.info(f"{self.couple_id}: {len(self.annotations)} recordings kept, {len(self.started)} started, "
                    f"{self.fault_tally['crashes']} crashes")
        return CoupleResult(self.couple_id, self.logs, self.annotations, self.started, policy_hits,
                            self.peripheral_recordings, self.fault_tally, self.not_shown, self.escalations,
                            self.session_trace, self.fabric.trace if self.record_trace else [])

    def _battery(self, t: int) -> float:
        since_midnight = (t % DAY_S) / HOUR_S
        return round(max(0.0, 100.0 - self.scenario.device.battery_drain_per_hour * since_midnight), 1)

    def _error(self, t: int, kind: str, message: str):
        self.logs.append(ErrorLog(self.couple_id, t, kind, message))

    def _escalate(self, d: int, completed_hours: List[int]):
        day = self.scenario.study_start + timedelta(days=d)
        compliance = self.scenario.compliance
        u, delay = self.people.random(), self.people.exponential(compliance.diary_delay_mean_s)
        diary_done = diary_completed(delay if u < compliance.diary_prob else None, self.timing.eod_expiry)
        stats = day_stats(self.couple.availability, day, completed_hours, diary_done)
        for check, decision in (('Afternoon', afternoon_check(stats)), ('EndOfDay', end_of_day_check(stats))):
            self.logs.append(EscalationLog(self.couple_id, day.isoformat(), check, tuple(decision.names)))
            for name in decision.names:
                self.escalations[name] = self.escalations.get(name, 0) + 1

    def _policy_hits(self) -> Dict[str, Tuple[int, int]]:
        """(conversations, recordings) per policy over the same ground truth"""
        rng = couple_rng(self.scenario.seed, self.index, STREAM_POLICY)
        duration = self.timing.record_duration
        running = [h for h in self.active_hours
                   if self.couple.powered and not self.faults.watch_dead(h)]
        random_minutes = rng.integers(0, (HOUR_S - duration) // 60 + 1, len(running))
        scheduled = [h + self.scenario.scheduled_minute * 60 for h in running]
        randomized = [h + int(m) * 60 for h, m in zip(running, random_minutes)]

        def hits(starts):
            return sum(1 for s in starts if self.trace.annotate(s, duration)[3]), len(starts)

        return {
            'dymand': hits([s for s, _ in self.started]),
            'dymand_triggered': hits([s for s, k in self.started if k == 'Triggered']),
            'dymand_backup': hits([s for s, k in self.started if k == 'Backup']),
            'scheduled': hits(scheduled),
            'random': hits(randomized),
        }

    # -- hour level ----------------------------------------------------------

    def _run_hour(self, hour_start: int) -> Optional[HourlyLog]:
        hour_end = hour_start + HOUR_S
        if self.down_until > hour_start:
            return None
        self.hour_start, self.hour_end = hour_start, hour_end
        self.tallies: Dict[str, List[int]] = {name: [] for name in TALLY_FIELDS}
        self.audio_discarded = False
        self.central_up = True
        self.restore_at: Optional[int] = None
        self.timers: List[Tuple[int, str]] = []
        self.p_timers: List[Tuple[int, str]] = []
        self.rec_end = self.p_rec_end = None
        self.now = self.scan_from = self.link_from = hour_start
        self.vad_start: Optional[int] = None
        self.up_spans = [[hour_start, hour_end]]
        if self.crash_index and self.down_until == hour_start:
            self.tallies['restarts'].append(hour_start)

        span = slice(hour_start, hour_end)
        draws = self.radio_rng.standard_normal(HOUR_S)
        self.rssi = predict_rssi(self.path_loss, self.trace.distance[span], draws) - self.trace.attenuation[span]
        self.proximate = proximate_mask(self.rssi, self.proximity)
        self.lost = lost_mask(self.rssi, self.proximity)

        self._central_event(EventKind.HOUR_START, hour_start)
        self._peripheral_event(EventKind.HOUR_START, hour_start)

        while True:
            step = self._next_step()
            if step is None:
                break
            self._dispatch(*step)

        if self.central_up:
            self._central_event(EventKind.HOUR_END, hour_end)
        else:
            self._restart_central(hour_end)
        self._peripheral_event(EventKind.HOUR_END, hour_end)
        for at, msg in self.fabric.pop_due(np.iinfo(np.int64).max):
            self._late(msg, at)

        return self._hourly_log()

    def _next_step(self) -> Optional[Tuple[int, int, str]]:
        candidates = []
        crashes = self.faults.crashes
        while self.crash_index < len(crashes) and crashes[self.crash_index].at < self.hour_start:
            self.crash_index += 1
        if self.crash_index < len(crashes) and crashes[self.crash_index].at < self.hour_end and self.central_up:
            candidates.append((crashes[self.crash_index].at, 1, 'crash'))
        if self.restore_at is not None:
            candidates.append((self.restore_at, 1, 'restore'))
        if self.central_up:
            phase = self.central.phase
            if phase is Phase.RECORDING:
                candidates.append((self.rec_end, 0, 'rec'))
            if self.timers:
                candidates.append((self.timers[0][0], 2, 'timer'))
            candidates += self._phase_candidates(phase)
        if self.peripheral.phase is Phase.RECORDING:
            candidates.append((self.p_rec_end, 0, 'p_rec'))
        if self.p_timers:
            candidates.append((self.p_timers[0][0], 2, 'p_timer'))
        delivery = self.fabric.next_delivery()
        if delivery is not None:
            candidates.append((_ceil_s(delivery), 3, 'msg'))
        candidates = [c for c in candidates if c[0] < self.hour_end]
        return min(candidates) if candidates else None

    def _phase_candidates(self, phase: Phase) -> List[Tuple[int, int, str]]:
        hs, he = self.hour_start, self.hour_end
        out = []
        if phase is Phase.SCANNING:
            at = _first_true(self.proximate, max(self.scan_from, self.now) - hs, HOUR_S)
            if at is not None:
                out.append((hs + at, 4, 'prox'))
        if phase in (Phase.CONNECTED, Phase.VAD_LISTENING):
            at = _first_true(self.lost, max(self.link_from, self.now) - hs, HOUR_S)
            if at is not None:
                out.append((hs + at, 4, 'lost'))
        if phase is Phase.VAD_LISTENING:
            at = self.vad.next_trigger(self.vad_start, self.vad_now, he)
            if at is not None:
                out.append((at, 4, 'speech'))
        return out

    def _dispatch(self, t: int, _prio: int, what: str):
        self.now = t
        if what == 'rec':
            self._central_event(EventKind.RECORDING_COMPLETE, t)
        elif what == 'p_rec':
            self._peripheral_event(EventKind.RECORDING_COMPLETE, t)
        elif what == 'timer':
            _, tid = heapq.heappop(self.timers)
            self._central_event(EventKind.TIMER_FIRED, t, tid)
        elif what == 'p_timer':
            _, tid = heapq.heappop(self.p_timers)
            self._peripheral_event(EventKind.TIMER_FIRED, t, tid)
        elif what == 'msg':
            for at, msg in self.fabric.pop_due(self.fabric.next_delivery()):
                self._deliver(msg, at, t)
        elif what == 'prox':
            self.tallies['closeness_met'].append(t)
            self._central_event(EventKind.PROXIMITY_MET, t)
        elif what == 'lost':
            self._central_event(EventKind.CONNECT_FAILED, t)
            self._peripheral_event(EventKind.CONNECT_FAILED, t)
        elif what == 'speech':
            self.tallies['vad_detections'].append(t)
            self._central_event(EventKind.SPEECH_DETECTED, t)
        elif what == 'crash':
            self._crash(t)
        elif what == 'restore':
            self.restore_at = None
            self.central_up = True
            self.tallies['restarts'].append(t)
            self._restart_central(t)

    # -- central watch -------------------------------------------------------

    def _central_event(self, kind: EventKind, t: int, tid: Optional[str] = None):
        event = SessionEvent(kind, t, tid)
        before = self.central
        self.vad_now = t
        after, actions = advance(before, event, self.timing)
        self.central = after
        if self.record_trace:
            self.session_trace.append(trace_record(t, before, event, after, actions, self.couple_id))
        self._on_phase_change(before.phase, after.phase, kind, t)
        pending = []
        for action in actions:
            pending += self._central_action(action, t)
        for follow_up in pending:
            self._central_event(follow_up, t)

    def _restart_central(self, t: int):
        before = self.central
        after, actions = restart(before, t, self.timing)
        self.central = after
        self.timers = []
        if self.record_trace:
            self.session_trace.append({'t': t, 'before': str(before), 'event': 'Restart', 'after': str(after),
                                       'actions': [str(a) for a in actions], 'couple': self.couple_id})
        self._on_phase_change(before.phase, after.phase, None, t)
        for action in actions:
            self._central_action(action, t)

    def _on_phase_change(self, before: Phase, after: Phase, kind: Optional[EventKind], t: int):
        if before is after:
            return
        if before is Phase.VAD_LISTENING:
            self._close_vad(t)
        if after is Phase.SCANNING:
            self.scan_from = t + 1 if kind is EventKind.CONNECT_FAILED else t

    def _close_vad(self, t: int):
        if self.vad_start is not None:
            self.tallies['no_silence_detections'] += self.vad.nonsilent_chunks(self.vad_start, t)
            self.vad_start = None

    def _central_action(self, action, t: int) -> List[EventKind]:
        kind = action.kind
        if kind is ActionKind.START_SCAN:
            self.tallies['ble_scan_or_advertise'].append(t)
        elif kind is ActionKind.CONNECT_PEER:
            return self._connect(t)
        elif kind is ActionKind.START_VAD:
            self.vad_start = self.vad_now = t
        elif kind in (ActionKind.START_RECORDING, ActionKind.START_BACKUP_RECORDING):
            self.tallies['recordings'].append(t)
            self.rec_end = t + self.timing.record_duration
            self.started.append((t, self.central.recording_kind.value))
        elif kind is ActionKind.START_PEER_RECORDING:
            msg = make_message(MessageKind.START_PEER_RECORDING, CENTRAL, PERIPHERAL, {'recording_start': t},
                               t * 1000)
            self.fabric.send(msg)
        elif kind is ActionKind.VIBRATE:
            self.tallies['selfreport_alert1' if self.central.alerts_sent == 1 else 'selfreport_alert2'].append(t)
        elif kind is ActionKind.SEND_RECORDING_DONE_INTENT:
            self._relay(t)
        elif kind is ActionKind.DELETE_AUDIO:
            self.audio_discarded = True
        elif kind is ActionKind.RETAIN_AUDIO:
            self.storage_mb = max(0.0, self.storage_mb - self.scenario.device.recording_mb)
        elif kind is ActionKind.SCHEDULE_TIMER:
            heapq.heappush(self.timers, (action.at, action.timer_id))
        return []

    def _connect(self, t: int) -> List[EventKind]:
        faults = self.scenario.faults
        self.ble, outcome = ble_connect(self.ble, True, self.radio_rng, faults.ble_failure_prob,
                                        faults.ble_failure_cap)
        if outcome is BleOutcome.CONNECTED:
            self.tallies['connections'].append(t)
            self.link_from = t + 1
            if self.peripheral.phase is Phase.SCANNING:
                self._peripheral_event(EventKind.PROXIMITY_MET, t)
            return []
        if outcome is BleOutcome.STACK_RESET_PERFORMED:
            self.fault_tally['ble_stack_resets'] += 1
            self._error(t, 'BleStackReset', f"BLE stack recreated (generation {self.ble.stack_generation})")
        return [EventKind.CONNECT_FAILED]

    def _relay(self, t: int):
        record = self.central.records[-1]
        intent = make_message(MessageKind.RECORDING_DONE_INTENT, CENTRAL, PHONE,
                              {'recording_start': record.start, 'kind': record.kind.value}, t * 1000)
        window_ms = (self.timing.first_alert_wait + self.timing.second_alert_wait) * 1000
        outcome = self.fabric.relay_selfreport_trigger(intent, window_ms)
        compliance = self.scenario.compliance
        u_start, u_complete = self.people.random(2)
        start_delay = self.people.exponential(compliance.start_delay_mean_s)
        duration = self.people.exponential(compliance.completion_duration_s)
        if isinstance(outcome, NotShown):
            self.not_shown[outcome.reason] = self.not_shown.get(outcome.reason, 0) + 1
            if outcome.reason == 'ServerHangup':
                self._error(t, 'ServerHangup', f"self-report for recording {record.start} not pushed")
            return
        if u_start >= compliance.start_prob or start_delay >= self.timing.selfreport_expiry:
            return
        started_at = _ceil_s(outcome.at) + int(np.ceil(start_delay))
        ref = {'recording_start': record.start}
        self.fabric.send(make_message(MessageKind.SELF_REPORT_STARTED, PHONE, CENTRAL, ref, started_at * 1000))
        if u_complete < compliance.complete_prob:
            done_at = started_at + int(np.ceil(duration))
            self.fabric.send(make_message(MessageKind.SELF_REPORT_COMPLETED, PHONE, CENTRAL, ref, done_at * 1000))

    def _deliver(self, msg, at_ms: int, t: int):
        if msg.receiver == PERIPHERAL:
            if self.peripheral.phase in (Phase.SCANNING, Phase.CONNECTED, Phase.RECORDING):
                self._peripheral_event(EventKind.PEER_RECORDING_REQUESTED, t)
            else:
                self._late(msg, at_ms)
            return
        if not self.central_up or not self._accepts(msg):
            self._late(msg, at_ms)
            return
        if msg.kind is MessageKind.SELF_REPORT_STARTED:
            self.tallies['selfreport_started'].append(t)
            self._central_event(EventKind.SELF_REPORT_STARTED, t)
        else:
            self.tallies['selfreport_completed'].append(t)
            self._central_event(EventKind.SELF_REPORT_COMPLETED, t)

    def _accepts(self, msg) -> bool:
        """Whether the central watch still waits for this self-report message"""
        state = self.central
        if not state.records or decode_payload(msg)['recording_start'] != state.records[-1].start:
            return False
        if state.phase is Phase.AWAITING_SELF_REPORT:
            return True
        return (msg.kind is MessageKind.SELF_REPORT_COMPLETED and state.phase is Phase.HOUR_DONE
                and state.records[-1].selfreport is SelfReport.STARTED)

    def _late(self, msg, at_ms: int):
        self.fault_tally['late_messages'] += 1
        self.fabric.note_late(msg, at_ms)

    def _crash(self, t: int):
        crash = self.faults.crashes[self.crash_index]
        self.crash_index += 1
        self.fault_tally['crashes'] += 1
        if not crash.restart_ok:
            self.fault_tally['failed_restarts'] += 1
        self.tallies['errors'].append(t)
        self._error(t, 'Crash', f"app crashed in {self.central}")
        if self.central.phase is Phase.VAD_LISTENING:
            self._close_vad(t)
        self.central_up = False
        self.timers = []
        self.up_spans[-1][1] = t
        self.down_until = crash.restored_at
        if crash.restored_at < self.hour_end:
            self.restore_at = crash.restored_at
            self.up_spans.append([crash.restored_at, self.hour_end])

    # -- peripheral watch ----------------------------------------------------

    def _peripheral_event(self, kind: EventKind, t: int, tid: Optional[str] = None):
        self.peripheral, actions = advance(self.peripheral, SessionEvent(kind, t, tid), self.timing)
        for action in actions:
            if action.kind in (ActionKind.START_RECORDING, ActionKind.START_BACKUP_RECORDING):
                self.p_rec_end = t + self.timing.record_duration
                self.peripheral_recordings += 1
            elif action.kind is ActionKind.SCHEDULE_TIMER:
                heapq.heappush(self.p_timers, (action.at, action.timer_id))
        if self.peripheral.phase is Phase.IDLE:
            self.p_timers = []

    # -- hourly log ----------------------------------------------------------

    def _hourly_log(self) -> HourlyLog:
        hs, he = self.hour_start, self.hour_end
        period = self.ble_log_period_s
        for start, stop in self.up_spans:
            first = start + (-start) % period
            for s in range(first, stop, period):
                self.logs.append(BleLog(self.couple_id, s * 1000, round(float(self.rssi[s - hs]), 2)))

        retained = [r for r in self.central.records if r.retained]
        retained_start = retained[-1].start if retained else None
        if retained:
            record = retained[-1]
            has_speech, male, female, conversation = self.trace.annotate(record.start, self.timing.record_duration)
            self.annotations.append(RecordingAnnotation(f"{self.couple_id}-{record.start}", has_speech, male,
                                                        female, conversation, record.kind.value))
        starts = self.tallies['recordings']
        return HourlyLog(
            couple_id=self.couple_id,
            hour_start=hs,
            timestamp=he,
            battery_level=self._battery(he - 1),
            was_backup=any(minute_of_hour(s) >= self.timing.backup_minute for s in starts),
            audio_discarded=self.audio_discarded,
            internet_available=not self.faults.internet_down_during(hs, he),
            storage_remaining_mb=round(self.storage_mb, 1),
            retained_recording_start=retained_start,
            **{name: EventTally.of(sorted(ts)) for name, ts in self.tallies.items()},
        )


def simulate_couple(scenario: Scenario, index: int, mode: str = GROUND_TRUTH, model: Optional[vad.VadModel] = None,
                    timing: Optional[TimingConfig] = None, record_trace: bool = False,
                    ble_log_period_s: int = 60) -> CoupleResult:
    return CoupleSimulator(scenario, index, mode, model, timing, record_trace, ble_log_period_s).run()


@dataclass
class SimReport:
    scenario: str
    seed: int
    mode: str
    study: StudyReport
    policies: Dict[str, Optional[float]]
    policy_samples: Dict[str, int]
    recordings: Dict[str, int]
    faults: Dict[str, int]
    not_shown: Dict[str, int]
    escalations: Dict[str, int]
    peripheral_recordings: int
    transport_messages: int

    @property
    def counts(self) -> CollectionCounts:
        return self.study.counts

    def to_dict(self) -> Dict:
        out = {k: v for k, v in asdict(self).items() if k != 'study'}
        out['study'] = report_dict(self.study)
        return out


@dataclass
class SimResult:
    logs_by_couple: Dict[str, List[LogEntry]]
    annotations: List[RecordingAnnotation]
    report: SimReport
    session_trace: List[Dict] = field(default_factory=list)
    transport_trace: List[Dict] = field(default_factory=list)

    @property
    def logs(self) -> List[LogEntry]:
        return [entry for entries in self.logs_by_couple.values() for entry in entries]

    def __iter__(self) -> Iterator:
        return iter((self.logs, self.annotations, self.report))


def _add(total: Dict[str, int], part: Dict[str, int]):
    for key, value in part.items():
        total[key] = total.get(key, 0) + value


def run(scenario: Scenario, mode: str = GROUND_TRUTH, jobs: int = 1, trace: bool = False,
        model: Optional[vad.VadModel] = None, timing: Optional[TimingConfig] = None,
        ble_log_period_s: int = 60) -> SimResult:
    """
    Simulate the whole study
    Args:
        scenario: Validated scenario
        mode: 'ground-truth' (fast) or 'dsp' (real VAD on synthesized audio)
        jobs: joblib worker count; results do not depend on it
        trace: Keep session and transport traces
        model: VAD model for dsp mode; defaults to the scenario's model file or a freshly trained one
        timing: Session timing, defaults to TimingConfig()
        ble_log_period_s: BLE log sampling period
    Returns:
        SimResult, which also unpacks as (logs, annotations, report)
    """
    if mode not in MODES:
        raise ValueError(f"unknown simulation mode {mode!r}, expected one of {', '.join(MODES)}")
    if mode == DSP and model is None:
        model = vad.load_model(scenario.vad.model_path) if scenario.vad.model_path else \
            default_dsp_model(scenario.seed)

    logger.info(f"Simulating {scenario.n_couples} couples over {scenario.days} days "
                f"(scenario {scenario.name}, seed {scenario.seed}, {mode})")
    results: List[CoupleResult] = Parallel(n_jobs=jobs)(
        delayed(simulate_couple)(scenario, i, mode, model, timing, trace, ble_log_period_s)
        for i in range(scenario.n_couples)
    )

    logs_by_couple = {r.couple_id: r.logs for r in results}
    annotations = [a for r in results for a in r.annotations]
    bundle = LogBundle.of(entry for r in results for entry in r.logs)
    study = build_report(collection_counts_from_logs(bundle.configs, bundle.hourly), annotations)

    hits: Dict[str, List[int]] = {}
    faults: Dict[str, int] = {}
    not_shown: Dict[str, int] = {}
    escalations: Dict[str, int] = {}
    for r in results:
        for policy, (conversations, total) in r.policy_hits.items():
            acc = hits.setdefault(policy, [0, 0])
            acc[0] += conversations
            acc[1] += total
        _add(faults, r.faults)
        _add(not_shown, r.not_shown)
        _add(escalations, r.escalations)
    started = [k for r in results for _, k in r.started]

    report = SimReport(
        scenario=scenario.name,
        seed=scenario.seed,
        mode=mode,
        study=study,
        policies={policy: percent(c, n) if n else None for policy, (c, n) in hits.items()},
        policy_samples={policy: n for policy, (_, n) in hits.items()},
        recordings={'started_triggered': started.count('Triggered'), 'started_backup': started.count('Backup'),
                    **{f"retained_{k}": v for k, v in study.recordings.items()}},
        faults=faults,
        not_shown=dict(sorted(not_shown.items())),
        escalations=dict(sorted(escalations.items())),
        peripheral_recordings=sum(r.peripheral_recordings for r in results),
        transport_messages=sum(len(r.transport_trace) for r in results),
    )
    logger.info(f"Collected {study.counts.sensor_collected} of {study.counts.total_expected} expected samples")
    return SimResult(logs_by_couple, annotations, report,
                     [rec for r in results for rec in r.session_trace],
                     [dict(rec, couple=r.couple_id) for r in results for rec in r.transport_trace])


def compare_policies(scenario: Scenario, mode: str = GROUND_TRUTH, jobs: int = 1) -> Dict[str, Optional[float]]:
    """Conversation-capture rate of the trigger policy against fixed-minute and random-minute recording"""
    return run(scenario, mode=mode, jobs=jobs).report.policies


def render_sim_report(report: SimReport) -> str:
    lines = [render_report(report.study), 'Policy comparison (conversation captured, %)']
    for policy, rate in report.policies.items():
        value = 'n/a' if rate is None else f"{rate:.1f}"
        lines.append(f"  {policy:<18} {value:>6}  (n={report.policy_samples[policy]})")
    for title, table in (('Recordings', report.recordings), ('Faults', report.faults),
                         ('Self-reports not shown', report.not_shown), ('Escalations', report.escalations)):
        lines.append('')
        lines.append(title)
        lines.extend(f"  {key:<28} {value}" for key, value in table.items())
    lines.append('')
    lines.append(f"Peripheral recordings: {report.peripheral_recordings}")
    lines.append(f"Transport messages traced: {report.transport_messages}")
    return '\n'.join(lines) + '\n'


def write_outputs(result: SimResult, out_dir: str) -> Dict[str, str]:
    """
    Write logs/<couple>.jsonl, annotations.csv, report.txt, report.json and, when traced, traces/
    Returns:
        Written paths by artifact name
    """
    logs_dir = os.path.join(out_dir, 'logs')
    os.makedirs(logs_dir, exist_ok=True)
    for couple_id, entries in result.logs_by_couple.items():
        write_log_file(os.path.join(logs_dir, f"{couple_id}.jsonl"), entries)
    paths = {'logs': logs_dir,
             'annotations': os.path.join(out_dir, 'annotations.csv'),
             'report': os.path.join(out_dir, 'report.txt'),
             'report_json': os.path.join(out_dir, 'report.json')}
    write_annotations(paths['annotations'], result.annotations)
    with open(paths['report'], 'w') as f:
        f.write(render_sim_report(result.report))
    with open(paths['report_json'], 'w') as f:
        json.dump(result.report.to_dict(), f, indent=2, sort_keys=True)
        f.write('\n')
    if result.session_trace or result.transport_trace:
        traces = os.path.join(out_dir, 'traces')
        os.makedirs(traces, exist_ok=True)
        for name, records in (('session.jsonl', result.session_trace), ('transport.jsonl', result.transport_trace)):
            with open(os.path.join(traces, name), 'w') as f:
                for record in records:
                    f.write(json.dumps(record, sort_keys=True) + '\n')
        paths['traces'] = traces
    logger.info(f"Simulation outputs written to {out_dir}")
    return paths
