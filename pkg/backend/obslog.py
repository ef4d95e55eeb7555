"""
Structured study logs and recording annotations.

Every log record is one JSON object per line carrying a "type" tag and the
schema version "v". Times are seconds on the study clock except BLE samples,
which are milliseconds.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple, Type, Union

import pandas as pd
from marshmallow import Schema, ValidationError, fields, post_load, validate, validates_schema

from errors import LogParseError, SchemaError
from escalation import AvailabilityWindows

logger = logging.getLogger(__name__)

LOG_VERSION = 1
HOUR_S = 3600


@dataclass(frozen=True)
class EventTally:
    count: int = 0
    timestamps: Tuple[int, ...] = ()

    @classmethod
    def of(cls, timestamps: Iterable[int]) -> 'EventTally':
        ts = tuple(timestamps)
        return cls(len(ts), ts)

    def __bool__(self):
        return self.count > 0


TALLY_FIELDS = (
    'ble_scan_or_advertise', 'closeness_met', 'no_silence_detections', 'vad_detections', 'connections',
    'recordings', 'selfreport_alert1', 'selfreport_alert2', 'selfreport_started', 'selfreport_completed',
    'errors', 'restarts',
)


@dataclass(frozen=True)
class HourlyLog:
    couple_id: str
    hour_start: int
    timestamp: int
    battery_level: float
    ble_scan_or_advertise: EventTally = EventTally()
    closeness_met: EventTally = EventTally()
    no_silence_detections: EventTally = EventTally()
    vad_detections: EventTally = EventTally()
    connections: EventTally = EventTally()
    recordings: EventTally = EventTally()
    selfreport_alert1: EventTally = EventTally()
    selfreport_alert2: EventTally = EventTally()
    selfreport_started: EventTally = EventTally()
    selfreport_completed: EventTally = EventTally()
    was_backup: bool = False
    audio_discarded: bool = False
    errors: EventTally = EventTally()
    restarts: EventTally = EventTally()
    internet_available: bool = True
    storage_remaining_mb: float = 0.0
    retained_recording_start: Optional[int] = None


@dataclass(frozen=True)
class ConfigLog:
    couple_id: str
    timestamp: int
    study_start: str
    days: int
    availability: AvailabilityWindows = field(default_factory=AvailabilityWindows)


@dataclass(frozen=True)
class BeforeStudyLog:
    couple_id: str
    timestamp: int
    battery_level: float
    countdown: str
    exceptions: int = 0


@dataclass(frozen=True)
class BleLog:
    couple_id: str
    timestamp_ms: int
    rssi_dbm: float


@dataclass(frozen=True)
class ErrorLog:
    couple_id: str
    timestamp: int
    kind: str
    message: str


@dataclass(frozen=True)
class EscalationLog:
    couple_id: str
    day: str
    check: str
    actions: Tuple[str, ...] = ()


LogEntry = Union[HourlyLog, ConfigLog, BeforeStudyLog, BleLog, ErrorLog, EscalationLog]


def format_countdown(seconds: int) -> str:
    days, rest = divmod(max(0, int(seconds)), 86400)
    hours, rest = divmod(rest, 3600)
    minutes, secs = divmod(rest, 60)
    return f"{days}d {hours}h {minutes}m {secs}s"


class TallySchema(Schema):
    count = fields.Integer(required=True, strict=True, validate=validate.Range(min=0))
    timestamps = fields.List(fields.Integer(strict=True), required=True)

    @validates_schema
    def check_count(self, data, **kwargs):
        if data['count'] != len(data['timestamps']):
            raise ValidationError(f"count {data['count']} does not match {len(data['timestamps'])} timestamps")

    @post_load
    def make(self, data, **kwargs):
        return EventTally(data['count'], tuple(data['timestamps']))


class HourlyLogSchema(Schema):
    couple_id = fields.String(required=True)
    hour_start = fields.Integer(required=True, strict=True)
    timestamp = fields.Integer(required=True, strict=True)
    battery_level = fields.Float(required=True, validate=validate.Range(min=0, max=100))
    was_backup = fields.Boolean(required=True)
    audio_discarded = fields.Boolean(required=True)
    internet_available = fields.Boolean(required=True)
    storage_remaining_mb = fields.Float(required=True, validate=validate.Range(min=0))
    retained_recording_start = fields.Integer(strict=True, allow_none=True, load_default=None)
    ble_scan_or_advertise = fields.Nested(TallySchema, required=True)
    closeness_met = fields.Nested(TallySchema, required=True)
    no_silence_detections = fields.Nested(TallySchema, required=True)
    vad_detections = fields.Nested(TallySchema, required=True)
    connections = fields.Nested(TallySchema, required=True)
    recordings = fields.Nested(TallySchema, required=True)
    selfreport_alert1 = fields.Nested(TallySchema, required=True)
    selfreport_alert2 = fields.Nested(TallySchema, required=True)
    selfreport_started = fields.Nested(TallySchema, required=True)
    selfreport_completed = fields.Nested(TallySchema, required=True)
    errors = fields.Nested(TallySchema, required=True)
    restarts = fields.Nested(TallySchema, required=True)

    @validates_schema
    def check_hour(self, data, **kwargs):
        start = data['hour_start']
        if start % HOUR_S:
            raise ValidationError(f"hour_start {start} is not on an hour boundary")
        for name in TALLY_FIELDS:
            outside = [t for t in data[name].timestamps if not start <= t < start + HOUR_S]
            if outside:
                raise ValidationError(f"{name}: timestamps {outside} outside the hour starting at {start}")
        retained = data.get('retained_recording_start')
        if retained is not None and retained not in data['recordings'].timestamps:
            raise ValidationError(f"retained recording {retained} is not among the recordings")

    @post_load
    def make(self, data, **kwargs):
        return HourlyLog(**data)


class AvailabilitySchema(Schema):
    weekday_morning = fields.List(fields.Integer(strict=True), required=True, validate=validate.Length(equal=2))
    weekday_evening = fields.List(fields.Integer(strict=True), required=True, validate=validate.Length(equal=2))
    weekend_morning = fields.List(fields.Integer(strict=True), required=True, validate=validate.Length(equal=2))
    weekend_evening = fields.List(fields.Integer(strict=True), required=True, validate=validate.Length(equal=2))

    @post_load
    def make(self, data, **kwargs):
        try:
            return AvailabilityWindows(**{k: tuple(v) for k, v in data.items()})
        except ValueError as e:
            raise ValidationError(str(e))


class ConfigLogSchema(Schema):
    couple_id = fields.String(required=True)
    timestamp = fields.Integer(required=True, strict=True)
    study_start = fields.String(required=True, validate=validate.Regexp(r'^\d{4}-\d{2}-\d{2}$'))
    days = fields.Integer(required=True, strict=True, validate=validate.Range(min=1))
    availability = fields.Nested(AvailabilitySchema, required=True)

    @post_load
    def make(self, data, **kwargs):
        return ConfigLog(**data)


class BeforeStudyLogSchema(Schema):
    couple_id = fields.String(required=True)
    timestamp = fields.Integer(required=True, strict=True)
    battery_level = fields.Float(required=True, validate=validate.Range(min=0, max=100))
    countdown = fields.String(required=True, validate=validate.Regexp(r'^\d+d \d+h \d+m \d+s$'))
    exceptions = fields.Integer(required=True, strict=True, validate=validate.Range(min=0))

    @post_load
    def make(self, data, **kwargs):
        return BeforeStudyLog(**data)


class BleLogSchema(Schema):
    couple_id = fields.String(required=True)
    timestamp_ms = fields.Integer(required=True, strict=True)
    rssi_dbm = fields.Float(required=True, validate=validate.Range(max=0, max_inclusive=False))

    @post_load
    def make(self, data, **kwargs):
        return BleLog(**data)


class ErrorLogSchema(Schema):
    couple_id = fields.String(required=True)
    timestamp = fields.Integer(required=True, strict=True)
    kind = fields.String(required=True)
    message = fields.String(required=True)

    @post_load
    def make(self, data, **kwargs):
        return ErrorLog(**data)


class EscalationLogSchema(Schema):
    couple_id = fields.String(required=True)
    day = fields.String(required=True, validate=validate.Regexp(r'^\d{4}-\d{2}-\d{2}$'))
    check = fields.String(required=True, validate=validate.OneOf(['Afternoon', 'EndOfDay']))
    actions = fields.List(fields.String(), required=True)

    @post_load
    def make(self, data, **kwargs):
        return EscalationLog(data['couple_id'], data['day'], data['check'], tuple(data['actions']))


RECORD_TYPES: Dict[str, Tuple[Type, Schema]] = {
    'config': (ConfigLog, ConfigLogSchema()),
    'before_study': (BeforeStudyLog, BeforeStudyLogSchema()),
    'hourly': (HourlyLog, HourlyLogSchema()),
    'ble': (BleLog, BleLogSchema()),
    'error': (ErrorLog, ErrorLogSchema()),
    'escalation': (EscalationLog, EscalationLogSchema()),
}
_TYPE_OF = {cls: name for name, (cls, _) in RECORD_TYPES.items()}


def write_log(entry: LogEntry) -> str:
    """Encode one record as a single line (no trailing newline)"""
    type_name = _TYPE_OF.get(type(entry))
    if type_name is None:
        raise SchemaError(f"not a log record: {type(entry).__name__}")
    schema = RECORD_TYPES[type_name][1]
    body = schema.dump(entry)
    errors = schema.validate(body)
    if errors:
        raise SchemaError(f"{type_name} record invalid: {errors}")
    return json.dumps({'type': type_name, 'v': LOG_VERSION, **body}, sort_keys=True, separators=(',', ':'))


def parse_log(line: str, line_no: int = 1, path: Optional[str] = None) -> LogEntry:
    """
    Decode one line
    Args:
        line: Line text
        line_no: 1-based line number used in error messages
        path: File the line came from, for error messages
    Returns:
        The typed record
    """
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as e:
        raise LogParseError(line_no, f"malformed record ({e.msg})", path)
    if not isinstance(raw, dict):
        raise LogParseError(line_no, "record is not an object", path)
    type_name = raw.pop('type', None)
    if not isinstance(type_name, str) or type_name not in RECORD_TYPES:
        raise LogParseError(line_no, f"unknown record type {type_name!r}", path)
    version = raw.pop('v', None)
    if version != LOG_VERSION:
        raise LogParseError(line_no, f"unsupported schema version {version!r}", path)
    try:
        return RECORD_TYPES[type_name][1].load(raw)
    except ValidationError as e:
        raise LogParseError(line_no, f"{type_name}: {e.messages}", path)


class LogWriter:
    """Append-only, single writer per file"""

    def __init__(self, path: str):
        self.path = path
        self.count = 0
        self._f = None

    def __enter__(self):
        self._f = open(self.path, 'a')
        return self

    def __exit__(self, *exc):
        self._f.close()
        self._f = None

    def write(self, entry: LogEntry):
        self._f.write(write_log(entry) + '\n')
        self.count += 1


def write_log_file(path: str, entries: Iterable[LogEntry]) -> int:
    if os.path.exists(path):
        os.remove(path)
    with LogWriter(path) as writer:
        for entry in entries:
            writer.write(entry)
    return writer.count


def read_log_file(path: str) -> List[LogEntry]:
    entries = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            entries.append(parse_log(line, line_no, path))
    return entries


def read_log_dir(logs_dir: str) -> List[LogEntry]:
    """Every *.jsonl file of a directory, in file-name order"""
    if not os.path.isdir(logs_dir):
        raise SchemaError(f"{logs_dir}: not a directory")
    entries = []
    for name in sorted(os.listdir(logs_dir)):
        if name.endswith('.jsonl'):
            entries.extend(read_log_file(os.path.join(logs_dir, name)))
    if not entries:
        raise SchemaError(f"{logs_dir}: no log records found")
    logger.info(f"Read {len(entries)} log records from {logs_dir}")
    return entries


@dataclass
class LogBundle:
    configs: List[ConfigLog] = field(default_factory=list)
    before_study: List[BeforeStudyLog] = field(default_factory=list)
    hourly: List[HourlyLog] = field(default_factory=list)
    ble: List[BleLog] = field(default_factory=list)
    errors: List[ErrorLog] = field(default_factory=list)
    escalations: List[EscalationLog] = field(default_factory=list)

    @classmethod
    def of(cls, entries: Iterable[LogEntry]) -> 'LogBundle':
        bundle = cls()
        target = {ConfigLog: bundle.configs, BeforeStudyLog: bundle.before_study, HourlyLog: bundle.hourly,
                  BleLog: bundle.ble, ErrorLog: bundle.errors, EscalationLog: bundle.escalations}
        for entry in entries:
            target[type(entry)].append(entry)
        return bundle

    def counts(self) -> Dict[str, int]:
        return {'config': len(self.configs), 'before_study': len(self.before_study), 'hourly': len(self.hourly),
                'ble': len(self.ble), 'error': len(self.errors), 'escalation': len(self.escalations)}


ANNOTATION_COLUMNS = ['recording_id', 'has_speech', 'male_spoke', 'female_spoke', 'conversation', 'kind']


@dataclass(frozen=True)
class RecordingAnnotation:
    recording_id: str
    has_speech: bool
    male_spoke: bool
    female_spoke: bool
    conversation: bool
    kind: str

    def __post_init__(self):
        if self.kind not in ('Triggered', 'Backup'):
            raise SchemaError(f"{self.recording_id}: kind must be Triggered or Backup, got {self.kind!r}")
        if self.conversation and not (self.male_spoke and self.female_spoke):
            raise SchemaError(f"{self.recording_id}: a conversation needs both partners speaking")
        if (self.male_spoke or self.female_spoke) and not self.has_speech:
            raise SchemaError(f"{self.recording_id}: a partner spoke but has_speech is no")


def _yes_no(value: bool) -> str:
    return 'yes' if value else 'no'


def write_annotations(path: str, annotations: Iterable[RecordingAnnotation]) -> int:
    rows = [{'recording_id': a.recording_id, 'has_speech': _yes_no(a.has_speech),
             'male_spoke': _yes_no(a.male_spoke), 'female_spoke': _yes_no(a.female_spoke),
             'conversation': _yes_no(a.conversation), 'kind': a.kind} for a in annotations]
    pd.DataFrame(rows, columns=ANNOTATION_COLUMNS).to_csv(path, index=False, lineterminator='\n')
    return len(rows)


def read_annotations(path: str) -> List[RecordingAnnotation]:
    # header=None leaves the width check to the parser: a row wider than the header is a ParserError
    try:
        df = pd.read_csv(path, header=None, dtype=str, keep_default_na=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise SchemaError(f"{path}: {e}")
    if list(df.iloc[0]) != ANNOTATION_COLUMNS:
        raise SchemaError(f"{path}: expected header {','.join(ANNOTATION_COLUMNS)}")
    out = []
    for row_no, cells in enumerate(df.iloc[1:].itertuples(index=False), start=2):
        if any(pd.isna(cell) for cell in cells):
            raise SchemaError(f"{path}:{row_no}: expected {len(ANNOTATION_COLUMNS)} cells")
        row = dict(zip(ANNOTATION_COLUMNS, cells))
        flags = {}
        for name in ANNOTATION_COLUMNS[1:5]:
            cell = row[name].strip().lower()
            if cell not in ('yes', 'no'):
                raise SchemaError(f"{path}:{row_no}: {name} must be yes or no, got {row[name]!r}")
            flags[name] = cell == 'yes'
        try:
            out.append(RecordingAnnotation(row['recording_id'], kind=row['kind'], **flags))
        except SchemaError as e:
            raise SchemaError(f"{path}:{row_no}: {e}")
    return out
