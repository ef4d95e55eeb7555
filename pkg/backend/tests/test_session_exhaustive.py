"""
The session machine against a straight-line reading of the hourly rules, over
every placement of up to three closeness-and-speech minutes. Mixed answers
over three triggers run on a five-minute grid.
"""

from itertools import combinations, product

import pytest

from reference_session import reference_hour
from session_harness import run_single_hour


def _check(minutes, responses):
    assert run_single_hour(minutes, responses) == reference_hour(minutes, responses), (minutes, responses)


@pytest.mark.parametrize('responses', list(product(('none', 'early', 'late'), repeat=2)))
def test_quiet_hour(responses):
    retained, starts, deletions = run_single_hour([], responses)
    assert starts[0] == (2640, 'Backup')
    assert (retained, starts, deletions) == reference_hour([], responses)


@pytest.mark.parametrize('responses', list(product(('none', 'early', 'late'), repeat=2)))
def test_every_single_trigger_minute(responses):
    for minute in range(60):
        _check([minute], responses)


@pytest.mark.parametrize('responses', list(product(('none', 'early'), repeat=3)))
def test_every_pair_of_trigger_minutes(responses):
    for minutes in combinations(range(60), 2):
        _check(list(minutes), responses)


@pytest.mark.parametrize('responses', list(product(('none', 'early'), repeat=4)))
def test_trigger_triples_on_a_five_minute_grid(responses):
    for minutes in combinations(range(0, 60, 5), 3):
        _check(list(minutes), responses)


# an answered trigger ends the hour, so a third trigger always follows two unanswered ones
@pytest.mark.parametrize('responses', [('none', 'none', third, 'none') for third in ('none', 'early', 'late')]
                         + [('none', 'none', 'none', 'early')])
def test_every_triple_of_trigger_minutes(responses):
    for minutes in combinations(range(60), 3):
        _check(list(minutes), responses)


def test_known_hours():
    # answered trigger at minute 10
    assert reference_hour([10], ['early']) == (600, [(600, 'Triggered')], 0)
    # unanswered trigger, later trigger inside the gap is skipped, backup at 44
    assert reference_hour([10, 25], ['none', 'early']) == (2640, [(600, 'Triggered'), (2640, 'Backup')], 1)
    # the backup gets there before a late trigger
    assert reference_hour([50], ['early']) == (2640, [(2640, 'Backup')], 0)
