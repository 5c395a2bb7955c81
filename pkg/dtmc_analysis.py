r"""Approximate Markov chain of the TE dynamics on the simplified channel.

States are ``Eq, C_{K-1}, ..., C_1, C_0, D``: ``C_n`` holds n players on a
correct action (optimal for NE, satisfying for SE), ``Eq`` is ``C_K`` and
``D`` has one discontent player. From ``C_n`` the chain only climbs to
``C_{n+1}``; from ``D`` the noisy search lands on ``C_{K-k}`` after a
cascade that leaves k players incorrect. Watchful/hopeful time and
configurations with several discontent players are neglected.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from channel_model import (
    InvalidParameterError,
    NetworkInstance,
    is_simplified,
    simplified_twin,
)
from te_learning import g_fn


logger = logging.getLogger("te-powerctl.dtmc")

EULER_GAMMA = 0.5772156649015329
ROW_TOL = 1e-12
EQ = "Eq"
DISCONTENT = "D"


class ModelMismatchError(ValueError):
    pass


class UnreachableTargetError(ArithmeticError):
    pass


class Target(str, Enum):
    NE = "ne"
    SE = "se"


def q_s(instance: NetworkInstance) -> int:
    """Number of grid powers that meet the threshold alone on a sub-band."""
    if not is_simplified(instance):
        raise ModelMismatchError("Q_S is defined for the simplified channel model only")
    levels = instance.power_levels
    return int(np.count_nonzero(levels / instance.noise_power >= instance.sinr_threshold))


@dataclass(frozen=True)
class DtmcParams:
    num_players: int
    num_channels: int
    num_power_levels: int
    epsilon: float
    delta_u: float = 0.0
    satisfying_levels: Optional[int] = None

    def __post_init__(self):
        K, C, Q = self.num_players, self.num_channels, self.num_power_levels
        if K < 1:
            raise InvalidParameterError(f"K must be positive, got {K}")
        if C <= K:
            raise InvalidParameterError(f"the chain needs C > K, got C={C}, K={K}")
        if Q < 2:
            raise InvalidParameterError(f"Q must be >= 2, got {Q}")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidParameterError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 <= self.delta_u <= 1.0:
            raise InvalidParameterError(f"delta_u must lie in [0, 1], got {self.delta_u}")
        if self.satisfying_levels is not None and not 0 <= self.satisfying_levels <= Q:
            raise InvalidParameterError(f"Q_S must lie in [0, Q], got {self.satisfying_levels}")

    @classmethod
    def from_instance(cls, instance: NetworkInstance, epsilon: float, delta_u: float = 0.0) -> "DtmcParams":
        twin = instance if is_simplified(instance) else simplified_twin(instance)
        return cls(
            num_players=instance.num_players,
            num_channels=instance.num_channels,
            num_power_levels=instance.num_power_levels,
            epsilon=epsilon,
            delta_u=delta_u,
            satisfying_levels=q_s(twin),
        )

    @property
    def experiment_factor(self) -> float:
        """ε^{1+G(Δu)}: experiment, then accept the improvement."""
        return self.epsilon ** (1.0 + g_fn(self.delta_u))

    def q_factor(self, target: Target) -> int:
        if Target(target) is Target.NE:
            return 1
        if not self.satisfying_levels:
            raise InvalidParameterError("SE analysis needs Q_S >= 1")
        return self.satisfying_levels


def state_labels(num_players: int) -> Tuple[str, ...]:
    return (EQ,) + tuple(f"C{n}" for n in range(num_players - 1, -1, -1)) + (DISCONTENT,)


def _check_probability(name: str, value: float) -> float:
    if not -ROW_TOL <= value <= 1.0 + ROW_TOL:
        raise InvalidParameterError(f"{name} = {value:.6g} falls outside [0, 1]")
    return min(max(value, 0.0), 1.0)


def p_eq_to_d(params: DtmcParams) -> float:
    K, C, Q = params.num_players, params.num_channels, params.num_power_levels
    value = K * (K - 1) ** 2 * params.epsilon ** 2 / C ** 2 * ((Q - 1) / Q) ** 2
    return _check_probability("P(Eq -> D)", value)


def p_d_to_eq(params: DtmcParams, target: Target) -> float:
    K, C, Q = params.num_players, params.num_channels, params.num_power_levels
    if Target(target) is Target.NE:
        value = (C - K + 1) / (C * Q)
    else:
        value = (C - K + 1) / C
    return _check_probability("P(D -> Eq)", value)


def p_d_to_c(params: DtmcParams, k: int) -> float:
    """Landing on C_{K-k}: k-1 collisions with occupied sub-bands, then a free one."""
    K, C = params.num_players, params.num_channels
    value = (C - K + k) / C ** k * math.factorial(K - 1) / math.factorial(K - k)
    return _check_probability(f"P(D -> C{K - k})", value)


def p_climb(params: DtmcParams, n: int, target: Target) -> float:
    """C_n -> C_{n+1}: one of the K-n incorrect players finds a correct action."""
    K, C, Q = params.num_players, params.num_channels, params.num_power_levels
    value = (K - n) * (C - n) * params.q_factor(target) * params.experiment_factor / (C * Q)
    return _check_probability(f"P(C{n} -> C{n + 1})", value)


@dataclass(frozen=True)
class DtmcModel:
    target: Target
    states: Tuple[str, ...]
    transition_matrix: np.ndarray
    params: Optional[DtmcParams] = None

    def __post_init__(self):
        P = np.array(self.transition_matrix, dtype=float)
        n = len(self.states)
        if P.shape != (n, n):
            raise InvalidParameterError(f"transition matrix must be {n}x{n}, got {P.shape}")
        if np.any(P < 0) or np.any(P > 1):
            raise InvalidParameterError("transition probabilities must lie in [0, 1]")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_TOL:
            raise InvalidParameterError("transition matrix rows must sum to 1")
        P.setflags(write=False)
        object.__setattr__(self, "transition_matrix", P)

    def index(self, state: str) -> int:
        try:
            return self.states.index(state)
        except ValueError:
            raise InvalidParameterError(f"unknown state {state!r}, chain has {self.states}") from None

    def probability(self, src: str, dst: str) -> float:
        return float(self.transition_matrix[self.index(src), self.index(dst)])


def transition_probs(params: DtmcParams, target: Target = Target.NE) -> DtmcModel:
    target = Target(target)
    K = params.num_players
    labels = state_labels(K)
    pos: Dict[str, int] = {s: i for i, s in enumerate(labels)}
    P = np.zeros((len(labels), len(labels)))

    def correct(n: int) -> int:
        return pos[EQ] if n == K else pos[f"C{n}"]

    eq, d = pos[EQ], pos[DISCONTENT]
    P[eq, d] = p_eq_to_d(params)
    for n in range(K):
        P[correct(n), correct(n + 1)] = p_climb(params, n, target)

    hit = p_d_to_eq(params, target)
    landing = {k: p_d_to_c(params, k) for k in range(1, K + 1)}
    # the direct hit of Eq is part of the one-player-incorrect landing mass
    first = landing[1] - hit
    if first < -ROW_TOL:
        raise InvalidParameterError(f"P(D -> Eq) = {hit:.6g} exceeds P(D -> C{K - 1}) = {landing[1]:.6g}")
    landing[1] = max(first, 0.0)
    P[d, eq] = hit
    for k, value in landing.items():
        P[d, correct(K - k)] += value

    for i in range(len(labels)):
        residual = 1.0 - (P[i].sum() - P[i, i])
        if residual < -ROW_TOL:
            raise InvalidParameterError(f"outgoing probability of {labels[i]} exceeds 1 by {-residual:.3g}")
        P[i, i] = max(residual, 0.0)
    # keep rows exactly stochastic after clipping
    P /= P.sum(axis=1, keepdims=True)
    return DtmcModel(target=target, states=labels, transition_matrix=P, params=params)


def hitting_times(model: DtmcModel, target: Optional[str] = None) -> np.ndarray:
    """Mean first-passage times of every state into `target` (0 for the target itself)."""
    t = model.index(target or model.states[0])
    n = len(model.states)
    A = np.eye(n) - model.transition_matrix
    A[t, :] = 0.0
    A[t, t] = 1.0
    b = np.ones(n)
    b[t] = 0.0
    try:
        times = linalg.solve(A, b)
    except (linalg.LinAlgError, ValueError) as e:
        raise UnreachableTargetError(f"{model.states[t]} is not reachable from every state: {e}") from e
    if not np.all(np.isfinite(times)) or np.any(times < -ROW_TOL):
        raise UnreachableTargetError(f"{model.states[t]} is not reachable from every state")
    return times


def hitting_time(model: DtmcModel, start: Optional[str] = None, target: Optional[str] = None) -> float:
    """Expected iterations from `start` (default: nobody correct) until `target` (default Eq)."""
    if start is None:
        start = "C0" if "C0" in model.states else model.states[-1]
    return float(hitting_times(model, target)[model.index(start)])


def stationary_distribution(model: DtmcModel) -> np.ndarray:
    P = model.transition_matrix
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = linalg.lstsq(A, b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationary_occupancy(model: DtmcModel) -> float:
    return float(stationary_distribution(model)[model.index(EQ)])


def bounds_T(params: DtmcParams, target: Target = Target.NE) -> Tuple[float, float]:
    K, C, Q = params.num_players, params.num_channels, params.num_power_levels
    scale = C * Q / (params.q_factor(target) * params.experiment_factor * (C - K))
    lower = scale * (EULER_GAMMA + math.log(K * (C - K) / C))
    upper = scale * (1.0 + math.log(K * (C - K + 1) / (C + 1)))
    if lower < 0:
        logger.warning("first-passage lower bound is negative (%.3g) for K=%d, C=%d", lower, K, C)
    return lower, upper


def _t_correct(params: DtmcParams, k: int, target: Target) -> float:
    K, C, Q = params.num_players, params.num_channels, params.num_power_levels
    tail = EULER_GAMMA + math.log(K * (C - k + 1) / (C + 1))
    if target is Target.NE:
        return C * Q / (params.experiment_factor * (C - K)) * tail
    return C * Q / (params.epsilon * (C - K) * params.q_factor(target)) * tail


def occupancy(params: DtmcParams, target: Target = Target.NE) -> float:
    """Closed-form long-run fraction of time spent at the equilibrium."""
    target = Target(target)
    K = params.num_players
    model = transition_probs(params, target)
    p_d_d = model.probability(DISCONTENT, DISCONTENT)
    recovery = sum(p_d_to_c(params, k) * _t_correct(params, k, target) for k in range(1, K + 1))
    recovery += p_d_to_eq(params, target) / (1.0 - p_d_d) ** 2
    return 1.0 / (1.0 + p_eq_to_d(params) * recovery)


def analyze(params: DtmcParams, target: Target = Target.NE) -> Dict[str, float]:
    target = Target(target)
    model = transition_probs(params, target)
    lower, upper = bounds_T(params, target)
    return {
        "K": params.num_players,
        "C": params.num_channels,
        "Q": params.num_power_levels,
        "Q_S": params.satisfying_levels,
        "eps": params.epsilon,
        "du": params.delta_u,
        "target": target.value,
        "p_eq_d": model.probability(EQ, DISCONTENT),
        "p_d_eq": model.probability(DISCONTENT, EQ),
        "t_lower": lower,
        "t_upper": upper,
        "t_exact": hitting_time(model),
        "occupancy": occupancy(params, target),
        "chain_occupancy": stationary_occupancy(model),
    }
