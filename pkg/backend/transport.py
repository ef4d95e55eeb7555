"""
Message fabric between the watches, the phone and the server.

Links carry latency, jitter, random loss and outage windows. All times in
this module are milliseconds on the virtual clock. Delivery is decided
from seeded draws only, so a run replays exactly.
"""

import heapq
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
from marshmallow import Schema, ValidationError, fields, validate

from errors import DomainError, RoutingError, SchemaError

logger = logging.getLogger(__name__)

CENTRAL = 'central'
PERIPHERAL = 'peripheral'
PHONE = 'phone'
SERVER = 'server'


class LinkKind(Enum):
    BLE = 'Ble'
    DATA_LAYER = 'DataLayer'
    INTERNET = 'Internet'


class MessageKind(Enum):
    CONFIG_HOURS = 'ConfigHours'
    BLE_HANDSHAKE_ACK = 'BleHandshakeAck'
    START_PEER_RECORDING = 'StartPeerRecording'
    RECORDING_DONE_INTENT = 'RecordingDoneIntent'
    SHOW_SELF_REPORT = 'ShowSelfReport'
    SELF_REPORT_STARTED = 'SelfReportStarted'
    SELF_REPORT_COMPLETED = 'SelfReportCompleted'
    ACK = 'Ack'
    LOG_TEXT = 'LogText'


@dataclass(frozen=True)
class Link:
    kind: LinkKind
    latency_ms: int
    jitter_ms: int = 0
    drop_prob: float = 0.0
    outage_intervals: Tuple[Tuple[int, int], ...] = ()
    endpoints: FrozenSet[str] = frozenset()
    store_and_forward: bool = False

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise DomainError(f"drop_prob must be in [0, 1], got {self.drop_prob}")
        if self.latency_ms < 0 or self.jitter_ms < 0:
            raise DomainError("latency and jitter must be non-negative")
        intervals = tuple(sorted(tuple(span) for span in self.outage_intervals))
        for (s0, e0), (s1, _) in zip(intervals, intervals[1:]):
            if s1 < e0:
                raise DomainError(f"outage intervals overlap at {s1} ms")
        if any(e <= s for s, e in intervals):
            raise DomainError("outage intervals must have positive length")
        object.__setattr__(self, 'outage_intervals', intervals)
        object.__setattr__(self, 'endpoints', frozenset(self.endpoints))

    def outage_at(self, t_ms: int) -> Optional[Tuple[int, int]]:
        for start, end in self.outage_intervals:
            if start <= t_ms < end:
                return start, end
            if start > t_ms:
                break
        return None


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: str
    receiver: str
    payload: bytes
    sent_at: int


@dataclass(frozen=True)
class Delivered:
    at: int


@dataclass(frozen=True)
class Dropped:
    reason: str


SendOutcome = Union[Delivered, Dropped]


class _HoursField(fields.List):
    def __init__(self, **kwargs):
        super().__init__(fields.Integer(validate=validate.Range(min=0, max=24)),
                         validate=validate.Length(equal=2), required=True, **kwargs)


class ConfigHoursSchema(Schema):
    weekday_morning = _HoursField()
    weekday_evening = _HoursField()
    weekend_morning = _HoursField()
    weekend_evening = _HoursField()


class HandshakeAckSchema(Schema):
    generation = fields.Integer(required=True, validate=validate.Range(min=0))


class RecordingRefSchema(Schema):
    recording_start = fields.Integer(required=True)


class RecordingDoneSchema(RecordingRefSchema):
    kind = fields.String(required=True, validate=validate.OneOf(['Triggered', 'Backup']))


class ShowSelfReportSchema(RecordingRefSchema):
    expires_at = fields.Integer(required=True)


class AckSchema(Schema):
    ack_kind = fields.String(required=True, validate=validate.OneOf([k.value for k in MessageKind]))


class LogTextSchema(Schema):
    text = fields.String(required=True)


PAYLOAD_SCHEMAS: Dict[MessageKind, Schema] = {
    MessageKind.CONFIG_HOURS: ConfigHoursSchema(),
    MessageKind.BLE_HANDSHAKE_ACK: HandshakeAckSchema(),
    MessageKind.START_PEER_RECORDING: RecordingRefSchema(),
    MessageKind.RECORDING_DONE_INTENT: RecordingDoneSchema(),
    MessageKind.SHOW_SELF_REPORT: ShowSelfReportSchema(),
    MessageKind.SELF_REPORT_STARTED: RecordingRefSchema(),
    MessageKind.SELF_REPORT_COMPLETED: RecordingRefSchema(),
    MessageKind.ACK: AckSchema(),
    MessageKind.LOG_TEXT: LogTextSchema(),
}


def make_message(kind: MessageKind, sender: str, receiver: str, payload: Dict, sent_at: int) -> Message:
    """Validate the kind-specific payload and encode it"""
    errors = PAYLOAD_SCHEMAS[kind].validate(payload)
    if errors:
        raise SchemaError(f"{kind.value} payload invalid: {errors}")
    return Message(kind, sender, receiver, json.dumps(payload, sort_keys=True).encode(), sent_at)


def decode_payload(msg: Message) -> Dict:
    try:
        return PAYLOAD_SCHEMAS[msg.kind].loads(msg.payload.decode())
    except (ValidationError, ValueError) as e:
        raise SchemaError(f"{msg.kind.value} payload invalid: {e}")


def send(link: Link, msg: Message, rng: np.random.Generator, clock: Optional[int] = None) -> SendOutcome:
    """
    Decide the fate of one message on a link
    Args:
        link: Link the message travels on
        msg: Message; sender and receiver must be attached to the link
        rng: Seeded generator; exactly two draws are consumed per call
        clock: Current clock position in ms, defaults to msg.sent_at
    Returns:
        Delivered(at) or Dropped(reason)
    """
    if msg.sender not in link.endpoints or msg.receiver not in link.endpoints:
        raise RoutingError(f"{msg.sender} -> {msg.receiver} is not routable on the {link.kind.value} link")
    t = msg.sent_at if clock is None else max(clock, msg.sent_at)
    u_drop, u_jitter = rng.random(2)
    delay = link.latency_ms + link.jitter_ms * u_jitter
    outage = link.outage_at(t)
    if outage is not None:
        if not link.store_and_forward:
            return Dropped('Outage')
        t = outage[1]
    if u_drop < link.drop_prob:
        return Dropped('Loss')
    return Delivered(int(round(t + delay)))


class BleOutcome(Enum):
    CONNECTED = 'Connected'
    FAILED = 'Failed'
    STACK_RESET_PERFORMED = 'StackResetPerformed'


@dataclass(frozen=True)
class BleConnectionState:
    consecutive_failures: int = 0
    stack_generation: int = 0


def ble_connect(state: BleConnectionState, proximity_ok: bool, rng: np.random.Generator,
                failure_prob: float = 0.0, failure_cap: int = 3) -> Tuple[BleConnectionState, BleOutcome]:
    """
    One connection attempt by the central watch
    Args:
        state: Failure counters
        proximity_ok: Whether the peer is in range at all
        rng: Seeded generator (one draw when in range)
        failure_prob: Per-attempt failure probability while in range
        failure_cap: Consecutive failures after which the BLE stack is recreated
    Returns:
        (new state, outcome)
    """
    if not proximity_ok:
        return state, BleOutcome.FAILED
    if rng.random() >= failure_prob:
        return replace(state, consecutive_failures=0), BleOutcome.CONNECTED
    failures = state.consecutive_failures + 1
    if failures >= failure_cap:
        logger.debug(f"BLE stack reset after {failures} failures (generation {state.stack_generation + 1})")
        return BleConnectionState(0, state.stack_generation + 1), BleOutcome.STACK_RESET_PERFORMED
    return replace(state, consecutive_failures=failures), BleOutcome.FAILED


@dataclass(frozen=True)
class ServerState:
    """Hang-up windows [start, end) in ms; each ends with a simulated server restart"""
    hangups: Tuple[Tuple[int, int], ...] = ()

    def hung_up(self, t_ms: int) -> bool:
        return any(start <= t_ms < end for start, end in self.hangups)


@dataclass(frozen=True)
class SelfReportShown:
    at: int


@dataclass(frozen=True)
class NotShown:
    reason: str


RelayOutcome = Union[SelfReportShown, NotShown]


@dataclass
class MessageFabric:
    """Deterministic delivery queue over a set of links with an exportable trace"""
    links: Dict[LinkKind, Link]
    rng: np.random.Generator
    server: ServerState = field(default_factory=ServerState)
    trace: List[Dict] = field(default_factory=list)
    _queue: List[Tuple[int, int, LinkKind, Message]] = field(default_factory=list)
    _seq: int = 0

    def link_for(self, sender: str, receiver: str) -> Link:
        for link in self.links.values():
            if sender in link.endpoints and receiver in link.endpoints:
                return link
        raise RoutingError(f"no link connects {sender} and {receiver}")

    def _note(self, t: int, link: LinkKind, msg: Message, outcome: str, at: Optional[int] = None):
        self.trace.append({'t': t, 'link': link.value, 'kind': msg.kind.value, 'from': msg.sender,
                           'to': msg.receiver, 'outcome': outcome, 'at': at})

    def send(self, msg: Message, enqueue: bool = True) -> SendOutcome:
        """Send one message; delivered messages are queued for the receiver unless `enqueue` is false"""
        link = self.link_for(msg.sender, msg.receiver)
        outcome = send(link, msg, self.rng)
        if isinstance(outcome, Delivered):
            self._note(msg.sent_at, link.kind, msg, 'Delivered', outcome.at)
            if not enqueue:
                return outcome
            heapq.heappush(self._queue, (outcome.at, self._seq, link.kind, msg))
            self._seq += 1
        else:
            self._note(msg.sent_at, link.kind, msg, outcome.reason)
        return outcome

    def note_late(self, msg: Message, at: int):
        """A delivered message the receiver no longer accepts"""
        self._note(msg.sent_at, self.link_for(msg.sender, msg.receiver).kind, msg, 'Late', at)

    def next_delivery(self) -> Optional[int]:
        return self._queue[0][0] if self._queue else None

    def pop_due(self, until_ms: int) -> List[Tuple[int, Message]]:
        """Deliveries up to `until_ms` in delivery order (FIFO on ties)"""
        out = []
        while self._queue and self._queue[0][0] <= until_ms:
            at, _, _, msg = heapq.heappop(self._queue)
            out.append((at, msg))
        return out

    def relay_selfreport_trigger(self, intent: Message, window_ms: int) -> RelayOutcome:
        return relay_selfreport_trigger(intent, self, window_ms)


def relay_selfreport_trigger(intent: Message, fabric: MessageFabric, window_ms: int = 240_000) -> RelayOutcome:
    """
    Watch -> phone -> server -> phone: the server pushes the questionnaire back to the phone
    Args:
        intent: RecordingDoneIntent sent by the central watch
        fabric: Fabric holding the DataLayer and Internet links plus server faults
        window_ms: The watch's 2 + 2 minute alert window
    Returns:
        SelfReportShown(at) or NotShown(reason)
    """
    if intent.kind is not MessageKind.RECORDING_DONE_INTENT:
        raise DomainError(f"expected RecordingDoneIntent, got {intent.kind.value}")
    ref = decode_payload(intent)
    hop = fabric.send(intent, enqueue=False)
    if isinstance(hop, Dropped):
        return NotShown('DataLayerDropped')

    upstream = make_message(MessageKind.RECORDING_DONE_INTENT, PHONE, SERVER, ref, hop.at)
    hop = fabric.send(upstream, enqueue=False)
    if isinstance(hop, Dropped):
        return NotShown('InternetUnavailable' if hop.reason == 'Outage' else 'InternetDropped')
    if fabric.server.hung_up(hop.at):
        return NotShown('ServerHangup')

    show = make_message(MessageKind.SHOW_SELF_REPORT, SERVER, PHONE,
                        {'recording_start': ref['recording_start'], 'expires_at': intent.sent_at + window_ms},
                        hop.at)
    hop = fabric.send(show, enqueue=False)
    if isinstance(hop, Dropped):
        return NotShown('InternetUnavailable' if hop.reason == 'Outage' else 'InternetDropped')
    if hop.at - intent.sent_at > window_ms:
        return NotShown('Timeout')
    return SelfReportShown(hop.at)


def deliver_config(fabric: MessageFabric, hours: Dict, start_ms: int, max_attempts: int = 5,
                   retry_ms: int = 60_000) -> Tuple[Optional[int], int]:
    """
    Setup-time ConfigHours transfer phone -> central watch, resent until acknowledged
    Returns:
        (time the phone saw the Ack or None, attempts used)
    """
    t = start_ms
    for attempt in range(1, max_attempts + 1):
        msg = make_message(MessageKind.CONFIG_HOURS, PHONE, CENTRAL, hours, t)
        hop = fabric.send(msg, enqueue=False)
        if isinstance(hop, Delivered):
            ack = make_message(MessageKind.ACK, CENTRAL, PHONE, {'ack_kind': MessageKind.CONFIG_HOURS.value}, hop.at)
            back = fabric.send(ack, enqueue=False)
            if isinstance(back, Delivered):
                return back.at, attempt
        t += retry_ms
    logger.warning(f"ConfigHours not acknowledged after {max_attempts} attempts")
    return None, max_attempts


def default_links(ble_latency_ms: int = 50, data_layer_latency_ms: int = 200, internet_latency_ms: int = 500,
                  jitter_ms: Sequence[int] = (0, 0, 0), drop_prob: Sequence[float] = (0.0, 0.0, 0.0),
                  internet_outages: Sequence[Tuple[int, int]] = (),
                  store_and_forward: bool = False) -> Dict[LinkKind, Link]:
    """The three links of one couple's deployment"""
    return {
        LinkKind.BLE: Link(LinkKind.BLE, ble_latency_ms, jitter_ms[0], drop_prob[0],
                           endpoints=frozenset({CENTRAL, PERIPHERAL})),
        LinkKind.DATA_LAYER: Link(LinkKind.DATA_LAYER, data_layer_latency_ms, jitter_ms[1], drop_prob[1],
                                  endpoints=frozenset({CENTRAL, PHONE})),
        LinkKind.INTERNET: Link(LinkKind.INTERNET, internet_latency_ms, jitter_ms[2], drop_prob[2],
                                outage_intervals=tuple(internet_outages), endpoints=frozenset({PHONE, SERVER}),
                                store_and_forward=store_and_forward),
    }
