"""
Event-queue driver for the central session machine.

Events due at the same second run in a fixed order: recording completion,
then timers, then self-report answers, then proximity ticks.
"""

import heapq
import itertools

from session import (HOUR_S, ActionKind, EventKind, Phase, SessionEvent, SessionState, TimingConfig, advance)

COMPLETE, TIMER, REPORT, TICK = range(4)

STARTS = (ActionKind.START_RECORDING, ActionKind.START_BACKUP_RECORDING)


def scripted_responder(responses):
    """One entry per completed recording: 'none', 'early' or 'late'"""
    def respond(end, index):
        response = responses[index] if index < len(responses) else 'none'
        if response == 'early':
            return [(end + 60, EventKind.SELF_REPORT_STARTED)]
        if response == 'late':
            return [(end + 180, EventKind.SELF_REPORT_COMPLETED)]
        return []
    return respond


class SessionHarness:
    def __init__(self, config=None, responder=None):
        self.config = config or TimingConfig()
        self.responder = responder or scripted_responder([])
        self.state = SessionState()
        self.clock = 0
        self.queue = []
        self._seq = itertools.count()
        self.starts = []
        self.deletions = 0
        self.intents = []
        self.vibrations = []
        self.reports = []
        self.hours = []

    def push(self, t, priority, payload):
        heapq.heappush(self.queue, (t, priority, next(self._seq), payload))

    def step(self, kind, at, tid=None):
        self.state, actions = advance(self.state, SessionEvent(kind, at, tid), self.config, clock=self.clock)
        self.clock = at
        for action in actions:
            if action.kind is ActionKind.SCHEDULE_TIMER:
                self.push(action.at, TIMER, ('timer', action.timer_id))
            elif action.kind in STARTS:
                self.starts.append((at, self.state.recording_kind.value))
                self.push(at + self.config.record_duration, COMPLETE, ('complete',))
            elif action.kind is ActionKind.SEND_RECORDING_DONE_INTENT:
                self.intents.append(at)
                for when, report in self.responder(at, len(self.intents) - 1):
                    self.push(when, REPORT, ('report', report))
            elif action.kind is ActionKind.VIBRATE:
                self.vibrations.append(at)
            elif action.kind is ActionKind.DELETE_AUDIO:
                self.deletions += 1
        return actions

    def tick(self, at, speech=True):
        """The pair comes within range at `at`; the connection drops after the VAD chunk"""
        if self.state.phase is Phase.SCANNING:
            self.step(EventKind.PROXIMITY_MET, at)
        if speech and self.state.phase is Phase.VAD_LISTENING:
            self.step(EventKind.SPEECH_DETECTED, at)
        if self.state.phase in (Phase.CONNECTED, Phase.VAD_LISTENING):
            self.step(EventKind.CONNECT_FAILED, at)

    def run_hour(self, hour_start, ticks):
        """
        Args:
            hour_start: Hour boundary on the virtual clock
            ticks: (time, speech) pairs inside the hour
        Returns:
            The hour's closed recording records
        """
        self.step(EventKind.HOUR_START, hour_start)
        for t, speech in ticks:
            self.push(t, TICK, ('tick', speech))
        hour_end = hour_start + HOUR_S + self.config.hour_grace
        while self.queue and self.queue[0][0] < hour_end:
            t, _, _, payload = heapq.heappop(self.queue)
            if payload[0] == 'tick':
                self.tick(t, payload[1])
            elif payload[0] == 'complete':
                self.step(EventKind.RECORDING_COMPLETE, t)
            elif payload[0] == 'timer':
                self.step(EventKind.TIMER_FIRED, t, payload[1])
            else:
                self.reports.append(t)
                self.step(payload[1], t)
        self.queue = []
        self.step(EventKind.HOUR_END, hour_end)
        self.hours.append((hour_start, self.state.records))
        return self.state.records


def run_single_hour(trigger_minutes, responses, hour_start=7 * HOUR_S, config=None):
    """Drive one fresh hour and report it the way reference_hour does"""
    harness = SessionHarness(config, scripted_responder(responses))
    records = harness.run_hour(hour_start, [(hour_start + 60 * m, True) for m in trigger_minutes])
    retained = next((r.start - hour_start for r in records if r.retained), None)
    starts = [(t - hour_start, kind) for t, kind in harness.starts]
    return retained, starts, harness.deletions
