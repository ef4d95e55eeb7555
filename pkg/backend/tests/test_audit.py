from dataclasses import replace

from audit import validate_session_logs
from conftest import hourly
from obslog import EventTally

H = 30 * 3600


def _rules(logs):
    return {v.rule for v in validate_session_logs(logs)}


def _answered(hour_start, start, **extra):
    log = hourly('c01', hour_start, retained=start, recordings=[start], selfreport_alert1=[start + 300],
                 selfreport_started=[start + 360])
    return replace(log, was_backup=(start - hour_start) // 60 >= 44, **extra)


def test_consistent_hours_pass():
    assert validate_session_logs([_answered(H, H + 600), _answered(H + 3600, H + 3600 + 2640)]) == []


def test_retained_recording_must_be_the_last():
    log = hourly('c01', H, retained=H + 60, recordings=[H + 60, H + 1500], selfreport_started=[H + 400])
    assert _rules([log]) == {'retained-is-last', 'deleted-audio'}
    assert _rules([replace(log, audio_discarded=True)]) == {'retained-is-last'}


def test_retention_needs_a_started_self_report():
    log = hourly('c01', H, retained=H + 60, recordings=[H + 60])
    assert _rules([log]) == {'retained-needs-selfreport'}


def test_minimum_gap_inside_and_across_hours():
    log = replace(hourly('c01', H, recordings=[H + 60, H + 900]), audio_discarded=True)
    assert 'min-gap' in _rules([log])
    late = _answered(H, H + 3000)
    assert _rules([late, _answered(H + 3600, H + 3600 + 600)]) == set()
    assert _rules([late, _answered(H + 3600, H + 3600 + 300)]) == {'min-gap'}


def test_recording_must_end_inside_the_hour():
    log = replace(hourly('c01', H, recordings=[H + 3400]), audio_discarded=True, was_backup=True)
    assert _rules([log]) == {'within-hour'}


def test_backup_flag_must_match_the_minutes():
    assert _rules([replace(_answered(H, H + 600), was_backup=True)]) == {'backup-flag'}


def test_quiet_hour_needs_exactly_one_backup():
    quiet = hourly('c01', H)
    assert _rules([quiet]) == {'backup-iff-no-trigger'}
    assert _rules([replace(quiet, restarts=EventTally.of([H + 100]))]) == set()
    twice = replace(hourly('c01', H, recordings=[H + 2640, H + 3300]), audio_discarded=True, was_backup=True)
    assert 'backup-iff-no-trigger' in _rules([twice])


def test_violations_name_couple_and_hour():
    (violation,) = validate_session_logs([hourly('c07', H)])
    assert violation.couple_id == 'c07'
    assert violation.hour_start == H
    assert str(violation).startswith(f"c07 @ {H}: backup-iff-no-trigger")
