from dataclasses import dataclass, replace
from enum import Enum
from typing import Tuple

import numpy as np

from channel_model import Action, InvalidParameterError, action_from_index, action_index


ACCEPTANCE_FLOOR = 1e-6
UTILITY_TOL = 1e-12


class Mood(str, Enum):
    CONTENT = "C"
    HOPEFUL = "C+"
    WATCHFUL = "C-"
    DISCONTENT = "D"


def g_fn(delta_u: float, slope: float = -0.2, intercept: float = 0.2) -> float:
    """Exponent of the content-experiment acceptance probability."""
    if not 0.0 <= delta_u <= 1.0:
        raise InvalidParameterError(f"G is defined on [0, 1], got {delta_u}")
    return slope * delta_u + intercept


def f_fn(u: float, num_players: int, slope: float = -0.2, intercept: float = 0.2) -> float:
    """Exponent of the discontent acceptance probability."""
    if not 0.0 <= u <= 1.0:
        raise InvalidParameterError(f"F is defined on [0, 1], got {u}")
    if num_players < 1:
        raise InvalidParameterError(f"K must be positive, got {num_players}")
    return (slope * u + intercept) / num_players


@dataclass(frozen=True)
class TeParams:
    epsilon: float
    num_players: int
    g_slope: float = -0.2
    g_intercept: float = 0.2
    f_slope: float = -0.2
    f_intercept: float = 0.2
    floor: float = ACCEPTANCE_FLOOR

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidParameterError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.num_players < 1:
            raise InvalidParameterError(f"K must be positive, got {self.num_players}")
        # linear shapes reach their extremes at the ends of [0, 1]
        g_ends = (self.g(0.0), self.g(1.0))
        if min(g_ends) < 0 or max(g_ends) >= 0.5:
            raise InvalidParameterError(f"G must stay within [0, 1/2), endpoints are {g_ends}")
        f_ends = (self.f(0.0), self.f(1.0))
        if min(f_ends) < 0 or max(f_ends) >= 1.0 / (2 * self.num_players):
            raise InvalidParameterError(f"F must stay within [0, 1/(2K)), endpoints are {f_ends}")

    def g(self, delta_u: float) -> float:
        return g_fn(delta_u, self.g_slope, self.g_intercept)

    def f(self, u: float) -> float:
        return f_fn(u, self.num_players, self.f_slope, self.f_intercept)

    def acceptance_probability(self, delta_u: float) -> float:
        return self.epsilon ** max(self.g(min(max(delta_u, 0.0), 1.0)), self.floor)

    def discontent_acceptance(self, u: float) -> float:
        return self.epsilon ** max(self.f(u), self.floor)


@dataclass(frozen=True)
class TeState:
    mood: Mood
    benchmark_action: Action
    benchmark_utility: float
    last_action: Action
    experimented: bool = False


def initial_state(num_channels: int, num_power_levels: int, rng: np.random.Generator) -> TeState:
    action = action_from_index(rng.integers(num_channels * num_power_levels), num_power_levels)
    return TeState(Mood.DISCONTENT, action, 0.0, action, False)


def _uniform_action(num_actions: int, num_power_levels: int, rng: np.random.Generator) -> Action:
    return action_from_index(rng.integers(num_actions), num_power_levels)


def select_action(
    state: TeState,
    num_channels: int,
    num_power_levels: int,
    epsilon: float,
    rng: np.random.Generator,
) -> Tuple[Action, bool]:
    num_actions = num_channels * num_power_levels
    if state.mood is Mood.DISCONTENT:
        return _uniform_action(num_actions, num_power_levels, rng), True
    if state.mood is Mood.CONTENT and num_actions > 1 and rng.random() < epsilon:
        # uniform over everything but the benchmark
        bench = action_index(state.benchmark_action, num_power_levels)
        pick = int(rng.integers(num_actions - 1))
        if pick >= bench:
            pick += 1
        return action_from_index(pick, num_power_levels), True
    return state.benchmark_action, False


def record_play(state: TeState, action: Action, experimented: bool) -> TeState:
    return replace(state, last_action=action, experimented=experimented)


def _compare(u: float, benchmark: float) -> int:
    if u > benchmark + UTILITY_TOL:
        return 1
    if u < benchmark - UTILITY_TOL:
        return -1
    return 0


def update(state: TeState, realized_utility: float, params: TeParams, rng: np.random.Generator) -> TeState:
    u = float(realized_utility)
    if not -UTILITY_TOL <= u <= 1.0 + UTILITY_TOL:
        raise InvalidParameterError(f"utility must lie in [0, 1], got {u}")
    u = min(max(u, 0.0), 1.0)
    ub = state.benchmark_utility
    trend = _compare(u, ub)
    mood = state.mood

    if mood is Mood.CONTENT:
        if state.experimented:
            if trend > 0 and rng.random() < params.acceptance_probability(u - ub):
                return replace(state, benchmark_action=state.last_action, benchmark_utility=u)
            return state
        if trend > 0:
            return replace(state, mood=Mood.HOPEFUL)
        if trend < 0:
            return replace(state, mood=Mood.WATCHFUL)
        return state

    if mood is Mood.HOPEFUL:
        if trend > 0:
            return replace(state, mood=Mood.CONTENT, benchmark_utility=u)
        if trend < 0:
            return replace(state, mood=Mood.WATCHFUL)
        return replace(state, mood=Mood.CONTENT)

    if mood is Mood.WATCHFUL:
        if trend < 0:
            return replace(state, mood=Mood.DISCONTENT)
        if trend > 0:
            return replace(state, mood=Mood.HOPEFUL)
        return replace(state, mood=Mood.CONTENT)

    if rng.random() < params.discontent_acceptance(u):
        return replace(
            state, mood=Mood.CONTENT, benchmark_action=state.last_action, benchmark_utility=u
        )
    return state
