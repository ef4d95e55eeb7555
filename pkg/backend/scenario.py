"""
Simulation scenarios: couples, behavior, compliance, faults and transport.

Scenario files are JSON validated by marshmallow; a failed validation lists
every violated field. Unset sections fall back to the defaults below.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Dict, List, Optional, Tuple

from marshmallow import Schema, ValidationError, fields, post_load, validate, validates_schema

from errors import SchemaError
from escalation import AvailabilityWindows

logger = logging.getLogger(__name__)

SCENARIO_VERSION = 1

_probability = validate.Range(min=0.0, max=1.0)
_positive = validate.Range(min=0.0, min_inclusive=False)
_non_negative = validate.Range(min=0.0)


@dataclass(frozen=True)
class CoupleSpec:
    couple_id: str
    availability: AvailabilityWindows = field(default_factory=AvailabilityWindows)
    powered: bool = True


@dataclass(frozen=True)
class BehaviorParams:
    together_bout_mean_min: float = 25.0
    bouts_per_day: float = 6.0
    speech_prob_together: float = 0.15
    speech_run_together_s: float = 4.0
    speech_prob_apart: float = 0.02
    speech_run_apart_s: float = 8.0
    distance_together_m: Tuple[float, float] = (0.5, 3.0)
    apart_floor_m: float = 50.0
    apart_extra_mean_m: float = 30.0
    hearing_range_m: float = 5.0
    wall_prob: float = 0.2
    wall_attenuation_db: float = 10.0
    tv_prob_per_day: float = 0.0
    tv_duration_min: float = 60.0
    ambient_noise_prob: float = 0.05
    always_together: bool = False


@dataclass(frozen=True)
class ComplianceParams:
    start_prob: float = 0.61
    complete_prob: float = 0.97
    start_delay_mean_s: float = 60.0
    completion_duration_s: float = 90.0
    diary_prob: float = 0.9
    diary_delay_mean_s: float = 900.0


@dataclass(frozen=True)
class FaultParams:
    charge_failure_prob: float = 0.02
    crash_prob_per_hour: float = 0.01
    restart_failure_prob: float = 0.1
    watchdog: bool = True
    ble_failure_prob: float = 0.05
    ble_failure_cap: int = 3
    internet_outage_prob_per_day: float = 0.2
    internet_outage_mean_min: float = 30.0
    server_hangup_prob_per_day: float = 0.03
    server_restart_min: float = 120.0


@dataclass(frozen=True)
class TransportParams:
    ble_latency_ms: int = 50
    data_layer_latency_ms: int = 200
    internet_latency_ms: int = 500
    jitter_ms: Tuple[int, int, int] = (10, 50, 200)
    drop_prob: Tuple[float, float, float] = (0.0, 0.005, 0.005)
    store_and_forward: bool = False


@dataclass(frozen=True)
class PathLossParams:
    rssi_at_1m_dbm: float = -66.0
    path_loss_exponent: float = 2.0
    noise_std_db: float = 4.0
    threshold_dbm: float = -80.0
    disconnect_dbm: float = -95.0


@dataclass(frozen=True)
class VadParams:
    hit_prob: float = 0.916
    false_alarm_prob: float = 0.001
    tv_false_alarm_prob: float = 0.3
    model_path: Optional[str] = None


@dataclass(frozen=True)
class DeviceParams:
    battery_drain_per_hour: float = 4.0
    storage_mb: float = 4000.0
    recording_mb: float = 4.8


@dataclass(frozen=True)
class Scenario:
    name: str = 'default'
    seed: int = 42
    days: int = 7
    study_start: date = date(2019, 9, 2)
    setup_days: int = 1
    scheduled_minute: int = 44
    couples: Tuple[CoupleSpec, ...] = ()
    behavior: BehaviorParams = field(default_factory=BehaviorParams)
    compliance: ComplianceParams = field(default_factory=ComplianceParams)
    faults: FaultParams = field(default_factory=FaultParams)
    transport: TransportParams = field(default_factory=TransportParams)
    path_loss: PathLossParams = field(default_factory=PathLossParams)
    vad: VadParams = field(default_factory=VadParams)
    device: DeviceParams = field(default_factory=DeviceParams)

    @property
    def n_couples(self) -> int:
        return len(self.couples)

    def with_seed(self, seed: int) -> 'Scenario':
        return replace(self, seed=seed)


def _window(**kwargs):
    return fields.List(fields.Integer(strict=True), validate=validate.Length(equal=2), **kwargs)


class AvailabilitySchema(Schema):
    weekday_morning = _window(load_default=[7, 11])
    weekday_evening = _window(load_default=[17, 22])
    weekend_morning = _window(load_default=[7, 11])
    weekend_evening = _window(load_default=[17, 22])

    @post_load
    def make(self, data, **kwargs):
        try:
            return AvailabilityWindows(**{k: tuple(v) for k, v in data.items()})
        except ValueError as e:
            raise ValidationError(str(e))


class CoupleSchema(Schema):
    id = fields.String(required=True, validate=validate.Length(min=1))
    availability = fields.Nested(AvailabilitySchema, load_default=lambda: AvailabilityWindows())
    powered = fields.Boolean(load_default=True)

    @post_load
    def make(self, data, **kwargs):
        return CoupleSpec(data['id'], data['availability'], data['powered'])


class BehaviorSchema(Schema):
    together_bout_mean_min = fields.Float(validate=_positive)
    bouts_per_day = fields.Float(validate=_non_negative)
    speech_prob_together = fields.Float(validate=_probability)
    speech_run_together_s = fields.Float(validate=_positive)
    speech_prob_apart = fields.Float(validate=_probability)
    speech_run_apart_s = fields.Float(validate=_positive)
    distance_together_m = fields.List(fields.Float(validate=_positive), validate=validate.Length(equal=2))
    apart_floor_m = fields.Float(validate=_positive)
    apart_extra_mean_m = fields.Float(validate=_non_negative)
    hearing_range_m = fields.Float(validate=_non_negative)
    wall_prob = fields.Float(validate=_probability)
    wall_attenuation_db = fields.Float(validate=_non_negative)
    tv_prob_per_day = fields.Float(validate=_probability)
    tv_duration_min = fields.Float(validate=_positive)
    ambient_noise_prob = fields.Float(validate=_probability)
    always_together = fields.Boolean()

    @validates_schema
    def check_distances(self, data, **kwargs):
        low, high = data.get('distance_together_m', (0.5, 3.0))
        if low > high:
            raise ValidationError('distance_together_m must be [low, high]', 'distance_together_m')

    @post_load
    def make(self, data, **kwargs):
        if 'distance_together_m' in data:
            data['distance_together_m'] = tuple(data['distance_together_m'])
        return BehaviorParams(**data)


class ComplianceSchema(Schema):
    start_prob = fields.Float(validate=_probability)
    complete_prob = fields.Float(validate=_probability)
    start_delay_mean_s = fields.Float(validate=_non_negative)
    completion_duration_s = fields.Float(validate=_non_negative)
    diary_prob = fields.Float(validate=_probability)
    diary_delay_mean_s = fields.Float(validate=_non_negative)

    @post_load
    def make(self, data, **kwargs):
        return ComplianceParams(**data)


class FaultSchema(Schema):
    charge_failure_prob = fields.Float(validate=_probability)
    crash_prob_per_hour = fields.Float(validate=_probability)
    restart_failure_prob = fields.Float(validate=_probability)
    watchdog = fields.Boolean()
    ble_failure_prob = fields.Float(validate=_probability)
    ble_failure_cap = fields.Integer(strict=True, validate=validate.Range(min=1))
    internet_outage_prob_per_day = fields.Float(validate=_probability)
    internet_outage_mean_min = fields.Float(validate=_positive)
    server_hangup_prob_per_day = fields.Float(validate=_probability)
    server_restart_min = fields.Float(validate=_positive)

    @post_load
    def make(self, data, **kwargs):
        return FaultParams(**data)


class TransportSchema(Schema):
    ble_latency_ms = fields.Integer(strict=True, validate=validate.Range(min=0))
    data_layer_latency_ms = fields.Integer(strict=True, validate=validate.Range(min=0))
    internet_latency_ms = fields.Integer(strict=True, validate=validate.Range(min=0))
    jitter_ms = fields.List(fields.Integer(strict=True, validate=validate.Range(min=0)),
                            validate=validate.Length(equal=3))
    drop_prob = fields.List(fields.Float(validate=_probability), validate=validate.Length(equal=3))
    store_and_forward = fields.Boolean()

    @post_load
    def make(self, data, **kwargs):
        for name in ('jitter_ms', 'drop_prob'):
            if name in data:
                data[name] = tuple(data[name])
        return TransportParams(**data)


class PathLossSchema(Schema):
    rssi_at_1m_dbm = fields.Float(validate=validate.Range(max=0, max_inclusive=False))
    path_loss_exponent = fields.Float(validate=validate.Range(min=1.0))
    noise_std_db = fields.Float(validate=_non_negative)
    threshold_dbm = fields.Float(validate=validate.Range(max=0, max_inclusive=False))
    disconnect_dbm = fields.Float(validate=validate.Range(max=0, max_inclusive=False))

    @post_load
    def make(self, data, **kwargs):
        return PathLossParams(**data)


class VadSchema(Schema):
    hit_prob = fields.Float(validate=_probability)
    false_alarm_prob = fields.Float(validate=_probability)
    tv_false_alarm_prob = fields.Float(validate=_probability)
    model_path = fields.String(allow_none=True)

    @post_load
    def make(self, data, **kwargs):
        return VadParams(**data)


class DeviceSchema(Schema):
    battery_drain_per_hour = fields.Float(validate=validate.Range(min=0.0, max=100.0))
    storage_mb = fields.Float(validate=_positive)
    recording_mb = fields.Float(validate=_non_negative)

    @post_load
    def make(self, data, **kwargs):
        return DeviceParams(**data)


class ScenarioSchema(Schema):
    version = fields.Integer(load_default=SCENARIO_VERSION, validate=validate.Equal(SCENARIO_VERSION))
    name = fields.String(load_default='scenario')
    seed = fields.Integer(required=True, strict=True)
    days = fields.Integer(load_default=7, strict=True, validate=validate.Range(min=1))
    study_start = fields.Date(load_default=date(2019, 9, 2))
    setup_days = fields.Integer(load_default=1, strict=True, validate=validate.Range(min=0))
    scheduled_minute = fields.Integer(load_default=44, strict=True, validate=validate.Range(min=0, max=55))
    couples = fields.List(fields.Nested(CoupleSchema), required=True, validate=validate.Length(min=1))
    behavior = fields.Nested(BehaviorSchema, load_default=lambda: BehaviorParams())
    compliance = fields.Nested(ComplianceSchema, load_default=lambda: ComplianceParams())
    faults = fields.Nested(FaultSchema, load_default=lambda: FaultParams())
    transport = fields.Nested(TransportSchema, load_default=lambda: TransportParams())
    path_loss = fields.Nested(PathLossSchema, load_default=lambda: PathLossParams())
    vad = fields.Nested(VadSchema, load_default=lambda: VadParams())
    device = fields.Nested(DeviceSchema, load_default=lambda: DeviceParams())

    @validates_schema
    def check_unique_ids(self, data, **kwargs):
        ids = [c.couple_id for c in data.get('couples', [])]
        if len(ids) != len(set(ids)):
            raise ValidationError('couple ids must be unique', 'couples')

    @post_load
    def make(self, data, **kwargs):
        data.pop('version')
        data['couples'] = tuple(data['couples'])
        return Scenario(**data)


def parse_scenario(raw: Dict) -> Scenario:
    """Validate a decoded scenario document"""
    try:
        return ScenarioSchema().load(raw)
    except ValidationError as e:
        raise SchemaError(f"invalid scenario: {json.dumps(e.messages, sort_keys=True)}")


def load_scenario(path: str, seed: Optional[int] = None) -> Scenario:
    """
    Read a scenario file
    Args:
        path: JSON scenario file
        seed: Optional override of the file's seed
    Returns:
        Scenario
    """
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: not valid JSON ({e})")
    scenario = parse_scenario(raw)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    logger.info(f"Loaded scenario {scenario.name!r}: {scenario.n_couples} couples, {scenario.days} days, "
                f"seed {scenario.seed}")
    return scenario


def simple_scenario(n_couples: int = 1, days: int = 1, seed: int = 0, **sections) -> Scenario:
    """Scenario with full default sections, for tests and what-if runs"""
    couples = tuple(CoupleSpec(f"c{i + 1:02d}") for i in range(n_couples))
    return Scenario(name='simple', seed=seed, days=days, couples=couples, **sections)
