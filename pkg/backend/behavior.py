"""
Ground-truth couple behavior at one-second resolution.

Co-location alternates exponential together/apart bouts; each partner's
speech is a two-state talking/quiet process whose talk share depends on
whether the partners are together.
"""

import logging
from dataclasses import dataclass
from datetime import timedelta
from typing import List, Optional

import numpy as np

from scenario import BehaviorParams, CoupleSpec, Scenario

logger = logging.getLogger(__name__)

DAY_S = 86400
TV_DISTANCE_M = 0.3


@dataclass
class CoupleTrace:
    couple_id: str
    distance: np.ndarray      # meters, float32
    a_speaking: np.ndarray    # partner A (male) speaking
    b_speaking: np.ndarray    # partner B (female) speaking
    worn: np.ndarray
    tv_on: np.ndarray
    attenuation: np.ndarray   # extra dB lost to walls and furniture

    def __post_init__(self):
        n = self.distance.size
        for name in ('a_speaking', 'b_speaking', 'worn', 'tv_on', 'attenuation'):
            if getattr(self, name).size != n:
                raise ValueError(f"{name} is not aligned with distance")

    def __len__(self):
        return self.distance.size

    def annotate(self, start: int, duration: int = 300):
        """(has_speech, male_spoke, female_spoke, conversation) over [start, start + duration)"""
        a = bool(self.a_speaking[start:start + duration].any())
        b = bool(self.b_speaking[start:start + duration].any())
        return a or b, a, b, a and b


def _run_lengths(rng: np.random.Generator, mean: float, size: int) -> np.ndarray:
    return np.maximum(1, np.rint(rng.exponential(mean, size))).astype(np.int64)


def alternating_runs(rng: np.random.Generator, n: int, mean_on: float, mean_off: float,
                     start_on: Optional[bool] = None) -> np.ndarray:
    """
    Boolean array of length n made of alternating exponential on/off runs
    Args:
        rng: Seeded generator
        n: Number of seconds
        mean_on: Mean on-run length in seconds (0 means never on)
        mean_off: Mean off-run length in seconds (0 means always on)
        start_on: First run state; drawn from the stationary share when None
    Returns:
        Boolean array
    """
    if mean_on <= 0:
        return np.zeros(n, dtype=bool)
    if mean_off <= 0:
        return np.ones(n, dtype=bool)
    if start_on is None:
        start_on = bool(rng.random() < mean_on / (mean_on + mean_off))
    lengths = []
    total = 0
    batch = max(16, int(2 * n / (mean_on + mean_off)) + 16)
    while total < n:
        on = _run_lengths(rng, mean_on, batch)
        off = _run_lengths(rng, mean_off, batch)
        pair = np.column_stack([on, off] if start_on else [off, on]).ravel()
        lengths.append(pair)
        total += int(pair.sum())
    lengths = np.concatenate(lengths)
    states = np.tile([start_on, not start_on], lengths.size // 2)
    return np.repeat(states, lengths)[:n]


def _speech_process(rng: np.random.Generator, n: int, share: float, run_s: float) -> np.ndarray:
    if share <= 0:
        return np.zeros(n, dtype=bool)
    if share >= 1:
        return np.ones(n, dtype=bool)
    return alternating_runs(rng, n, run_s, run_s * (1 - share) / share)


def _bout_values(together: np.ndarray, rng: np.random.Generator, draw_together, draw_apart) -> np.ndarray:
    """One value per bout, broadcast over the bout's seconds"""
    edges = np.flatnonzero(np.diff(together.astype(np.int8))) + 1
    starts = np.concatenate([[0], edges])
    lengths = np.diff(np.concatenate([starts, [together.size]]))
    bout_together = together[starts]
    values = np.where(bout_together, draw_together(starts.size), draw_apart(starts.size))
    return np.repeat(values, lengths)


def generate_trace(couple: CoupleSpec, scenario: Scenario, rng: np.random.Generator) -> CoupleTrace:
    """
    Per-second ground truth for one couple over the whole study
    Args:
        couple: Couple
        scenario: Scenario holding behavior parameters
        rng: The couple's seeded behavior stream
    Returns:
        CoupleTrace
    """
    params: BehaviorParams = scenario.behavior
    n = scenario.days * DAY_S

    together_mean = params.together_bout_mean_min * 60.0
    if params.always_together:
        together = np.ones(n, dtype=bool)
    elif params.bouts_per_day > 0:
        week = [len(couple.availability.hours(scenario.study_start + timedelta(days=d))) for d in range(7)]
        waking = float(np.mean(week)) * 3600.0 or 9 * 3600.0
        apart_mean = max(60.0, (waking - params.bouts_per_day * together_mean) / params.bouts_per_day)
        together = alternating_runs(rng, n, together_mean, apart_mean)
    else:
        together = np.zeros(n, dtype=bool)

    low, high = params.distance_together_m
    distance = _bout_values(
        together, rng,
        lambda k: rng.uniform(low, high, k),
        lambda k: params.apart_floor_m + rng.exponential(params.apart_extra_mean_m, k),
    ).astype(np.float32)
    attenuation = _bout_values(
        together, rng,
        lambda k: np.where(rng.random(k) < params.wall_prob, params.wall_attenuation_db, 0.0),
        lambda k: np.zeros(k),
    ).astype(np.float32)

    speech = []
    for _ in range(2):
        near = _speech_process(rng, n, params.speech_prob_together, params.speech_run_together_s)
        far = _speech_process(rng, n, params.speech_prob_apart, params.speech_run_apart_s)
        speech.append(np.where(together, near, far))

    worn = np.ones(n, dtype=bool)
    tv_on = np.zeros(n, dtype=bool)
    tv_len = int(params.tv_duration_min * 60)
    for d in range(scenario.days):
        if rng.random() < params.tv_prob_per_day:
            # evening television with both watches lying next to each other
            start = d * DAY_S + int(rng.integers(18 * 3600, 22 * 3600))
            tv_on[start:start + tv_len] = True
    worn[tv_on] = False
    distance[tv_on] = TV_DISTANCE_M
    attenuation[tv_on] = 0.0

    trace = CoupleTrace(couple.couple_id, distance, speech[0], speech[1], worn, tv_on, attenuation)
    logger.debug(f"{couple.couple_id}: together {together.mean():.1%} of the time, "
                 f"A speaking {trace.a_speaking.mean():.1%}, B speaking {trace.b_speaking.mean():.1%}")
    return trace


def couple_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    """Independent per-couple substreams: 0 behavior, 1 faults, 2 radio, 3 vad, 4 transport, 5 people, 6 policy"""
    return np.random.default_rng([seed, index, stream])


def generate_traces(scenario: Scenario, rng: Optional[np.random.Generator] = None) -> List[CoupleTrace]:
    """Traces for every couple; without an explicit generator each couple uses its own seeded substream"""
    if rng is None:
        return [generate_trace(couple, scenario, couple_rng(scenario.seed, i, 0))
                for i, couple in enumerate(scenario.couples)]
    children = rng.spawn(len(scenario.couples))
    return [generate_trace(couple, scenario, child) for couple, child in zip(scenario.couples, children)]
