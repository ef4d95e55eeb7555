"""
Straight-line reading of the hourly trigger rules, used as an oracle for the
session state machine. Times are seconds from the start of a single hour in
which nothing was recorded the hour before.

A trigger is a minute at which the pair is close and speaking. Responses are
consumed one per completed recording: 'none' lets the handshake expire,
'early' starts the self-report one minute after the recording ends and
'late' completes it three minutes after (after the second vibration).
"""

HOUR = 3600


def reference_hour(trigger_minutes, responses, record=300, gap=1200, backup_minute=44, first_wait=120,
                   second_wait=120):
    """
    Returns:
        (retained start or None, [(start, kind)], number of deleted recordings)
    """
    triggers = sorted(60 * m for m in trigger_minutes)
    free_from = 0
    last = None
    backup_at = backup_minute * 60
    starts = []
    deletions = 0
    k = 0
    while True:
        trigger = next((t for t in triggers
                        if t >= free_from and (last is None or t - last >= gap) and t + record <= HOUR), None)
        if backup_at is not None and backup_at < free_from:
            backup_at = None
        options = [t for t in (backup_at, trigger) if t is not None]
        if not options:
            return None, starts, deletions
        s = min(options)
        by_backup = backup_at is not None and s == backup_at
        kind = 'Backup' if by_backup or s // 60 >= backup_minute else 'Triggered'
        starts.append((s, kind))
        backup_at = None
        last = s
        end = s + record
        if end >= HOUR:
            # still recording when the hour closes
            return None, starts, deletions + 1
        response = responses[k] if k < len(responses) else 'none'
        k += 1
        if response == 'early' and end + 60 < HOUR:
            return s, starts, deletions
        if response == 'late' and end + 180 < HOUR:
            return s, starts, deletions
        expiry = end + first_wait + second_wait
        if expiry >= HOUR:
            return None, starts, deletions + 1
        deletions += 1
        free_from = expiry
        at = max(backup_minute * 60, last + gap, expiry)
        backup_at = at if at + record <= HOUR else None
