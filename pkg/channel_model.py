import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Any, NamedTuple, Optional, Sequence, Tuple

import numpy as np


logger = logging.getLogger("te-powerctl.channel")

SIMPLIFIED = "simplified"
RAYLEIGH = "rayleigh"
CUSTOM = "custom"


class InvalidParameterError(ValueError):
    pass


class Action(NamedTuple):
    channel: int
    power_index: int


# a joint profile is a plain tuple of K actions so it can live in sets
ActionProfile = Tuple[Action, ...]


def power_grid(num_levels: int, max_power: float) -> np.ndarray:
    """Uniform linear grid of `num_levels` powers from 0 to `max_power`."""
    if num_levels < 2:
        raise InvalidParameterError(f"Q must be >= 2, got {num_levels}")
    if not max_power > 0:
        raise InvalidParameterError(f"P_MAX must be > 0, got {max_power}")
    return np.arange(num_levels) * (max_power / (num_levels - 1))


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """Static radio environment of K links sharing C sub-bands.

    `gains[k, l, b]` is the power gain from transmitter l to receiver k on
    sub-band b. The array is made read-only on construction so instances can
    be shared between trials.
    """

    num_players: int
    num_channels: int
    num_power_levels: int
    max_power: float
    noise_power: float
    sinr_threshold: float
    gains: np.ndarray
    beta: float
    channel: str = CUSTOM
    seed: Optional[int] = None
    _levels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K, C = self.num_players, self.num_channels
        if K < 1 or C < 1:
            raise InvalidParameterError(f"K and C must be positive, got K={K}, C={C}")
        if not self.noise_power > 0:
            raise InvalidParameterError(f"noise power must be > 0, got {self.noise_power}")
        if not self.sinr_threshold > 0:
            raise InvalidParameterError(f"SINR threshold must be > 0, got {self.sinr_threshold}")
        if not self.beta > 0:
            raise InvalidParameterError(f"beta must be > 0, got {self.beta}")
        gains = np.array(self.gains, dtype=float)
        if gains.shape != (K, K, C):
            raise InvalidParameterError(f"gains must have shape {(K, K, C)}, got {gains.shape}")
        if np.any(gains < 0) or not np.all(np.isfinite(gains)):
            raise InvalidParameterError("gains must be finite and >= 0")
        diag = gains[np.arange(K), np.arange(K), :]
        if np.any(diag <= 0):
            raise InvalidParameterError("direct gains g[k][k][b] must be > 0")
        gains.setflags(write=False)
        object.__setattr__(self, "gains", gains)
        levels = power_grid(self.num_power_levels, self.max_power)
        levels.setflags(write=False)
        object.__setattr__(self, "_levels", levels)

    @property
    def power_levels(self) -> np.ndarray:
        return self._levels

    @property
    def action_count(self) -> int:
        return self.num_channels * self.num_power_levels

    @property
    def profile_count(self) -> int:
        return self.action_count ** self.num_players

    @property
    def satisfies_beta_condition(self) -> bool:
        return self.beta > self.num_players

    @cached_property
    def action_channels(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_channels), self.num_power_levels)

    @cached_property
    def action_powers(self) -> np.ndarray:
        return np.tile(self._levels, self.num_channels)

    def power(self, action: Action) -> float:
        return float(self._levels[action.power_index])

    def total_power(self, profile: ActionProfile) -> float:
        return float(sum(self._levels[a.power_index] for a in profile))

    def validate_profile(self, profile: Sequence[Action]) -> ActionProfile:
        if len(profile) != self.num_players:
            raise InvalidParameterError(
                f"profile has {len(profile)} actions, instance has {self.num_players} players"
            )
        out = []
        for a in profile:
            b, q = int(a[0]), int(a[1])
            if not (0 <= b < self.num_channels and 0 <= q < self.num_power_levels):
                raise InvalidParameterError(f"action {tuple(a)} outside the action grid")
            out.append(Action(b, q))
        return tuple(out)

    def to_config(self) -> Dict[str, Any]:
        return {
            "K": self.num_players,
            "C": self.num_channels,
            "Q": self.num_power_levels,
            "p_max": self.max_power,
            "noise": self.noise_power,
            "gamma": self.sinr_threshold,
            "beta": self.beta,
            "channel": self.channel,
            "seed": self.seed,
        }


def action_index(action: Action, num_power_levels: int) -> int:
    return action.channel * num_power_levels + action.power_index


def action_from_index(index: int, num_power_levels: int) -> Action:
    return Action(int(index) // num_power_levels, int(index) % num_power_levels)


def sinr(instance: NetworkInstance, profile: ActionProfile, k: int) -> float:
    """SINR of link k, treating co-channel interference as noise."""
    b_k, q_k = profile[k]
    p_k = instance.power_levels[q_k]
    if p_k == 0:
        return 0.0
    g = instance.gains
    interference = instance.noise_power
    for l, (b_l, q_l) in enumerate(profile):
        if l != k and b_l == b_k:
            interference = interference + instance.power_levels[q_l] * g[k, l, b_l]
    return float(p_k * g[k, k, b_k] / interference)


def sinr_vector(instance: NetworkInstance, profile: ActionProfile) -> np.ndarray:
    K = instance.num_players
    channels = np.fromiter((a.channel for a in profile), dtype=int, count=K)
    powers = instance.power_levels[np.fromiter((a.power_index for a in profile), dtype=int, count=K)]
    # rx[k] hears tx[l] on channel b_l, counted only when b_l == b_k
    received = instance.gains[:, np.arange(K), channels] * powers[None, :]
    co_channel = channels[:, None] == channels[None, :]
    np.fill_diagonal(co_channel, False)
    interference = instance.noise_power + (received * co_channel).sum(axis=1)
    return np.diagonal(received) / interference


def is_satisfied(instance: NetworkInstance, profile: ActionProfile, k: int) -> bool:
    return sinr(instance, profile, k) >= instance.sinr_threshold


def all_satisfiable_precondition(instance: NetworkInstance) -> bool:
    """High-SNR condition under which every link can be served on its own sub-band."""
    K = instance.num_players
    diag = instance.gains[np.arange(K), np.arange(K), :]
    floor = instance.sinr_threshold * instance.noise_power / instance.max_power
    return bool(np.all(diag >= floor) and instance.num_channels >= K)


def make_simplified_instance(
    num_players: int,
    num_channels: int,
    num_power_levels: int,
    max_power: float,
    noise_power: float,
    sinr_threshold: float,
    beta: float,
) -> NetworkInstance:
    if num_players < 1 or num_channels < 1:
        raise InvalidParameterError(f"K and C must be positive, got K={num_players}, C={num_channels}")
    gains = np.full((num_players, num_players, num_channels), 0.5)
    idx = np.arange(num_players)
    gains[idx, idx, :] = 1.0
    return NetworkInstance(
        num_players=num_players,
        num_channels=num_channels,
        num_power_levels=num_power_levels,
        max_power=max_power,
        noise_power=noise_power,
        sinr_threshold=sinr_threshold,
        gains=gains,
        beta=beta,
        channel=SIMPLIFIED,
    )


def rayleigh_gains(num_players: int, num_channels: int, rng: np.random.Generator) -> np.ndarray:
    shape = (num_players, num_players, num_channels)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return np.abs(h) ** 2


def sample_rayleigh_instance(
    num_players: int,
    num_channels: int,
    num_power_levels: int,
    max_power: float,
    noise_power: float,
    sinr_threshold: float,
    beta: float,
    seed: int,
) -> NetworkInstance:
    """Block-fading Rayleigh instance; gains are exponential(1), fixed by `seed`."""
    if num_players < 1 or num_channels < 1:
        raise InvalidParameterError(f"K and C must be positive, got K={num_players}, C={num_channels}")
    rng = np.random.default_rng(seed)
    return NetworkInstance(
        num_players=num_players,
        num_channels=num_channels,
        num_power_levels=num_power_levels,
        max_power=max_power,
        noise_power=noise_power,
        sinr_threshold=sinr_threshold,
        gains=rayleigh_gains(num_players, num_channels, rng),
        beta=beta,
        channel=RAYLEIGH,
        seed=seed,
    )


def is_simplified(instance: NetworkInstance) -> bool:
    """True when the gains follow the unit-direct / half-cross pattern."""
    K = instance.num_players
    expected = np.full(instance.gains.shape, 0.5)
    expected[np.arange(K), np.arange(K), :] = 1.0
    return bool(np.array_equal(instance.gains, expected))


def simplified_twin(instance: NetworkInstance) -> NetworkInstance:
    return make_simplified_instance(
        instance.num_players,
        instance.num_channels,
        instance.num_power_levels,
        instance.max_power,
        instance.noise_power,
        instance.sinr_threshold,
        instance.beta,
    )
