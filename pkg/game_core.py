import itertools
import logging
import os
from dataclasses import dataclass, field
from typing import FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from channel_model import (
    Action,
    ActionProfile,
    NetworkInstance,
    action_from_index,
    sinr,
)


logger = logging.getLogger("te-powerctl.game")

DEFAULT_ENUMERATION_CAP = 10_000_000
TOL = 1e-12


class InstanceTooLargeError(OverflowError):
    pass


def enumeration_cap(cap: Optional[int] = None) -> int:
    if cap is not None:
        return int(cap)
    return int(os.getenv("TE_ENUMERATION_CAP", str(DEFAULT_ENUMERATION_CAP)))


def _check_cap(instance: NetworkInstance, cap: Optional[int]) -> None:
    limit = enumeration_cap(cap)
    total = instance.profile_count
    if total > limit:
        raise InstanceTooLargeError(
            f"{total} joint profiles (CQ={instance.action_count}, K={instance.num_players}) exceed the cap of {limit}"
        )


def utility(instance: NetworkInstance, profile: ActionProfile, k: int) -> float:
    p_k = instance.power_levels[profile[k].power_index]
    satisfied = 1.0 if sinr(instance, profile, k) >= instance.sinr_threshold else 0.0
    return float(
        ((instance.max_power - p_k) / instance.max_power + instance.beta * satisfied)
        / (1.0 + instance.beta)
    )


def utilities(instance: NetworkInstance, profile: ActionProfile) -> np.ndarray:
    return np.array([utility(instance, profile, k) for k in range(instance.num_players)])


@dataclass(frozen=True)
class GameOutcome:
    profile: ActionProfile
    utilities: Tuple[float, ...]
    satisfied: Tuple[bool, ...]
    welfare: float
    total_power: float


def evaluate(instance: NetworkInstance, profile: Sequence[Action]) -> GameOutcome:
    profile = instance.validate_profile(profile)
    u = tuple(utility(instance, profile, k) for k in range(instance.num_players))
    sat = tuple(
        sinr(instance, profile, k) >= instance.sinr_threshold for k in range(instance.num_players)
    )
    return GameOutcome(
        profile=profile,
        utilities=u,
        satisfied=sat,
        welfare=float(sum(u)),
        total_power=instance.total_power(profile),
    )


def _with_action(profile: Sequence[Action], k: int, action: Action) -> ActionProfile:
    out = list(profile)
    out[k] = action
    return tuple(out)


def all_actions(instance: NetworkInstance) -> List[Action]:
    return [
        Action(b, q)
        for b in range(instance.num_channels)
        for q in range(instance.num_power_levels)
    ]


def satisfaction_set(
    instance: NetworkInstance, profile_minus_k: Sequence[Action], k: int
) -> FrozenSet[Action]:
    """Actions of player k meeting the SINR threshold against the fixed others."""
    if len(profile_minus_k) != instance.num_players - 1:
        raise ValueError(
            f"expected {instance.num_players - 1} other actions, got {len(profile_minus_k)}"
        )
    others = list(profile_minus_k)
    found = set()
    for a in all_actions(instance):
        profile = tuple(others[:k] + [a] + others[k:])
        if sinr(instance, profile, k) >= instance.sinr_threshold:
            found.add(a)
    return frozenset(found)


def is_nash(instance: NetworkInstance, profile: Sequence[Action]) -> bool:
    profile = instance.validate_profile(profile)
    for k in range(instance.num_players):
        current = utility(instance, profile, k)
        for a in all_actions(instance):
            if a == profile[k]:
                continue
            if utility(instance, _with_action(profile, k, a), k) > current + TOL:
                return False
    return True


class GameTensors(NamedTuple):
    """Per-player quantities over the full joint action space, axis k = action of player k."""

    sinr: np.ndarray        # (K, A, ..., A)
    satisfied: np.ndarray   # (K, A, ..., A) bool
    utilities: np.ndarray   # (K, A, ..., A)
    own_power: Tuple[np.ndarray, ...]  # broadcast views, player k's power on axis k
    num_power_levels: int

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.utilities.shape[1:]

    @property
    def total_power(self) -> np.ndarray:
        total = np.zeros(self.shape)
        for p in self.own_power:
            total = total + p
        return total


def _axis_shape(num_players: int, size: int, axes: Sequence[int]) -> Tuple[int, ...]:
    return tuple(size if i in axes else 1 for i in range(num_players))


def _expand_pair(term: np.ndarray, k: int, l: int, num_players: int) -> np.ndarray:
    # term is indexed [a_k, a_l]
    if k > l:
        term = term.T
    return term.reshape(_axis_shape(num_players, term.shape[0], (k, l)))


def game_tensors(instance: NetworkInstance, cap: Optional[int] = None) -> GameTensors:
    _check_cap(instance, cap)
    K, A = instance.num_players, instance.action_count
    shape = (A,) * K
    channels = instance.action_channels
    powers = instance.action_powers
    g = instance.gains
    same_channel = channels[:, None] == channels[None, :]

    sinrs = np.empty((K,) + shape)
    own = []
    for k in range(K):
        signal = (powers * g[k, k, channels]).reshape(_axis_shape(K, A, (k,)))
        interference = np.full((1,) * K, instance.noise_power)
        for l in range(K):
            if l == k:
                continue
            term = same_channel * (powers * g[k, l, channels])[None, :]
            interference = interference + _expand_pair(term, k, l, K)
        sinrs[k] = np.broadcast_to(signal / interference, shape)
        own.append(np.broadcast_to(powers.reshape(_axis_shape(K, A, (k,))), shape))

    satisfied = sinrs >= instance.sinr_threshold
    util = np.empty_like(sinrs)
    for k in range(K):
        util[k] = (
            (instance.max_power - own[k]) / instance.max_power + instance.beta * satisfied[k]
        ) / (1.0 + instance.beta)
    logger.debug("game tensors built: K=%d, A=%d, %d profiles", K, A, A ** K)
    return GameTensors(sinrs, satisfied, util, tuple(own), instance.num_power_levels)


def _profiles(mask: np.ndarray, num_power_levels: int) -> FrozenSet[ActionProfile]:
    return frozenset(
        tuple(action_from_index(a, num_power_levels) for a in row) for row in np.argwhere(mask)
    )


def nash_mask(t: GameTensors) -> np.ndarray:
    mask = np.ones(t.shape, dtype=bool)
    for k in range(t.utilities.shape[0]):
        best = t.utilities[k].max(axis=k, keepdims=True)
        mask &= t.utilities[k] >= best - TOL
    return mask


def satisfaction_mask(t: GameTensors) -> np.ndarray:
    return t.satisfied.all(axis=0)


def efficient_satisfaction_mask(t: GameTensors) -> np.ndarray:
    mask = satisfaction_mask(t)
    for k in range(t.satisfied.shape[0]):
        effort = np.where(t.satisfied[k], t.own_power[k], np.inf)
        least = effort.min(axis=k, keepdims=True)
        mask &= t.own_power[k] <= least + TOL
    return mask


def global_solution_mask(t: GameTensors) -> Tuple[int, np.ndarray]:
    count = t.satisfied.sum(axis=0)
    k_star = int(count.max())
    feasible = count == k_star
    # unsatisfied links stay silent
    for k in range(t.satisfied.shape[0]):
        feasible &= t.satisfied[k] | (t.own_power[k] == 0)
    total = t.total_power
    least = total[feasible].min()
    return k_star, feasible & (total <= least + 1e-9)


def find_nash(instance: NetworkInstance, cap: Optional[int] = None) -> FrozenSet[ActionProfile]:
    t = game_tensors(instance, cap)
    return _profiles(nash_mask(t), t.num_power_levels)


def find_satisfaction_equilibria(
    instance: NetworkInstance, cap: Optional[int] = None
) -> FrozenSet[ActionProfile]:
    t = game_tensors(instance, cap)
    return _profiles(satisfaction_mask(t), t.num_power_levels)


def find_efficient_se(instance: NetworkInstance, cap: Optional[int] = None) -> FrozenSet[ActionProfile]:
    t = game_tensors(instance, cap)
    return _profiles(efficient_satisfaction_mask(t), t.num_power_levels)


def solve_global(
    instance: NetworkInstance, cap: Optional[int] = None
) -> Tuple[int, FrozenSet[ActionProfile]]:
    """Largest satisfiable link count K* and the minimum-power profiles reaching it."""
    t = game_tensors(instance, cap)
    k_star, mask = global_solution_mask(t)
    return k_star, _profiles(mask, t.num_power_levels)


def check_interdependence(instance: NetworkInstance, cap: Optional[int] = None) -> bool:
    """Every proper subgroup can move someone outside it, from every profile.

    For a subgroup S and fixed actions of the others, some outsider's utility
    must vary over the actions of S; if it varies at all, every point of that
    slice has a deviation of S that changes it.
    """
    t = game_tensors(instance, cap)
    K = instance.num_players
    players = range(K)
    for size in range(1, K):
        for group in itertools.combinations(players, size):
            moved = np.zeros(_axis_shape(K, 1, ()), dtype=bool)
            for i in players:
                if i in group:
                    continue
                u = t.utilities[i]
                spread = u.max(axis=group, keepdims=True) - u.min(axis=group, keepdims=True)
                moved = moved | (spread > TOL)
            if not moved.all():
                logger.debug("subgroup %s leaves every outsider unaffected somewhere", group)
                return False
    return True


def isolated_links(instance: NetworkInstance) -> List[int]:
    K = instance.num_players
    out = []
    for k in range(K):
        others = [l for l in range(K) if l != k]
        if others and not instance.gains[k, others, :].any() and not instance.gains[others, k, :].any():
            out.append(k)
    return out


def welfare(instance: NetworkInstance, profile: ActionProfile) -> float:
    return float(utilities(instance, profile).sum())


@dataclass(frozen=True)
class EquilibriumReport:
    nash_profiles: FrozenSet[ActionProfile]
    satisfaction_profiles: FrozenSet[ActionProfile]
    efficient_satisfaction_profiles: FrozenSet[ActionProfile]
    opt_solutions: FrozenSet[ActionProfile]
    max_satisfiable: int
    num_players: int
    nash_max_satisfied: FrozenSet[ActionProfile] = field(default_factory=frozenset)
    welfare_maximal_nash: FrozenSet[ActionProfile] = field(default_factory=frozenset)

    @property
    def nash_optimal(self) -> FrozenSet[ActionProfile]:
        # optimal set counts only when every link can be served
        if self.max_satisfiable != self.num_players:
            return frozenset()
        return self.nash_profiles & self.opt_solutions


def _maximisers(values: np.ndarray, mask: np.ndarray, num_power_levels: int) -> FrozenSet[ActionProfile]:
    if not mask.any():
        return frozenset()
    best = values[mask].max()
    return _profiles(mask & (values >= best - 1e-9), num_power_levels)


def equilibrium_report(instance: NetworkInstance, cap: Optional[int] = None) -> EquilibriumReport:
    t = game_tensors(instance, cap)
    Q = t.num_power_levels
    ne = nash_mask(t)
    k_star, opt = global_solution_mask(t)
    report = EquilibriumReport(
        nash_profiles=_profiles(ne, Q),
        satisfaction_profiles=_profiles(satisfaction_mask(t), Q),
        efficient_satisfaction_profiles=_profiles(efficient_satisfaction_mask(t), Q),
        opt_solutions=_profiles(opt, Q),
        max_satisfiable=k_star,
        num_players=instance.num_players,
        nash_max_satisfied=_maximisers(t.satisfied.sum(axis=0).astype(float), ne, Q),
        welfare_maximal_nash=_maximisers(t.utilities.sum(axis=0), ne, Q),
    )
    logger.info(
        "equilibria: %d NE, %d SE, %d ESE, K*=%d with %d optimal profiles",
        len(report.nash_profiles),
        len(report.satisfaction_profiles),
        len(report.efficient_satisfaction_profiles),
        k_star,
        len(report.opt_solutions),
    )
    return report


def welfare_maximal_nash(instance: NetworkInstance, cap: Optional[int] = None) -> FrozenSet[ActionProfile]:
    t = game_tensors(instance, cap)
    return _maximisers(t.utilities.sum(axis=0), nash_mask(t), t.num_power_levels)
