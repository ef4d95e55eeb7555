import json
import os
from datetime import date

import pytest

from errors import SchemaError
from escalation import AvailabilityWindows
from scenario import BehaviorParams, ComplianceParams, load_scenario, parse_scenario, simple_scenario

DEFAULT_SCENARIO = os.path.join(os.path.dirname(__file__), '..', '..', 'scenarios', 'default.json')


def test_minimal_document_takes_the_defaults():
    scenario = parse_scenario({'seed': 3, 'couples': [{'id': 'c01'}]})
    assert scenario.seed == 3
    assert scenario.days == 7
    assert scenario.study_start == date(2019, 9, 2)
    assert scenario.couples[0].availability == AvailabilityWindows()
    assert scenario.couples[0].powered
    assert scenario.behavior == BehaviorParams()
    assert scenario.compliance == ComplianceParams()


def test_sections_override_single_fields():
    scenario = parse_scenario({'seed': 1, 'couples': [{'id': 'a', 'availability': {'weekday_morning': [6, 8]}}],
                               'compliance': {'start_prob': 0.5}, 'transport': {'jitter_ms': [1, 2, 3]}})
    assert scenario.couples[0].availability.weekday_morning == (6, 8)
    assert scenario.couples[0].availability.weekday_evening == (17, 22)
    assert scenario.compliance.start_prob == 0.5
    assert scenario.compliance.complete_prob == ComplianceParams().complete_prob
    assert scenario.transport.jitter_ms == (1, 2, 3)


@pytest.mark.parametrize('doc, field', [
    ({'seed': 1, 'couples': [{'id': 'a'}], 'compliance': {'start_prob': 1.3}}, 'start_prob'),
    ({'seed': 1, 'couples': [{'id': 'a'}, {'id': 'a'}]}, 'unique'),
    ({'couples': [{'id': 'a'}]}, 'seed'),
    ({'seed': 1, 'couples': []}, 'couples'),
    ({'seed': 1, 'couples': [{'id': 'a', 'availability': {'weekday_evening': [12, 14]}}]}, 'weekday_evening'),
    ({'seed': 1, 'couples': [{'id': 'a'}], 'behavior': {'distance_together_m': [4.0, 1.0]}}, 'distance_together_m'),
    ({'seed': 1, 'couples': [{'id': 'a'}], 'version': 2}, 'version'),
])
def test_invalid_documents_name_the_field(doc, field):
    with pytest.raises(SchemaError, match=field):
        parse_scenario(doc)


def test_every_violation_is_reported():
    doc = {'seed': 1, 'couples': [{'id': 'a'}],
           'compliance': {'start_prob': 1.3}, 'faults': {'crash_prob_per_hour': -0.1}}
    with pytest.raises(SchemaError) as info:
        parse_scenario(doc)
    assert 'start_prob' in str(info.value)
    assert 'crash_prob_per_hour' in str(info.value)


def test_default_scenario_file_loads():
    scenario = load_scenario(DEFAULT_SCENARIO)
    ids = [c.couple_id for c in scenario.couples]
    assert len(ids) == len(set(ids))
    assert scenario.days == 7
    assert load_scenario(DEFAULT_SCENARIO, seed=9).seed == 9


def test_scenario_file_must_be_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"seed": 1,')
    with pytest.raises(SchemaError, match='not valid JSON'):
        load_scenario(str(path))
    path.write_text(json.dumps({'seed': 1, 'couples': [{'id': 'a'}], 'vad': {'hit_prob': 1.3}}))
    with pytest.raises(SchemaError, match='hit_prob'):
        load_scenario(str(path))


def test_simple_scenario():
    scenario = simple_scenario(n_couples=3, days=2, seed=4, behavior=BehaviorParams(bouts_per_day=1.0))
    assert [c.couple_id for c in scenario.couples] == ['c01', 'c02', 'c03']
    assert scenario.behavior.bouts_per_day == 1.0
    assert scenario.with_seed(8).seed == 8
