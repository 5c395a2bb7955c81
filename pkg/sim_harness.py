import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from channel_model import (
    Action,
    ActionProfile,
    InvalidParameterError,
    NetworkInstance,
    action_from_index,
    action_index,
    sinr_vector,
)
from config import ExperimentConfig, InstanceConfig
from dtmc_analysis import (
    DtmcParams,
    Target,
    UnreachableTargetError,
    bounds_T,
    hitting_time,
    occupancy,
    stationary_occupancy,
    transition_probs,
)
from game_core import (
    InstanceTooLargeError,
    equilibrium_report,
    game_tensors,
    global_solution_mask,
    nash_mask,
)
from te_learning import TeParams, TeState, initial_state, record_play, select_action, update


logger = logging.getLogger("te-powerctl.sim")

TRACE_COLUMNS = ["iteration", "player", "mood", "channel", "power_index", "utility", "benchmark_utility"]


@dataclass(frozen=True)
class TrialOracle:
    """Flat lookup tables over the joint profile index sum_k a_k * A^(K-1-k)."""

    utilities: np.ndarray   # (K, A^K)
    satisfied: np.ndarray   # (K, A^K) bool
    nash: np.ndarray        # (A^K,) bool
    optimal: np.ndarray     # (A^K,) bool
    optimal_power: float
    max_satisfiable: int
    strides: Tuple[int, ...]

    @classmethod
    def build(cls, instance: NetworkInstance, cap: Optional[int] = None) -> Optional["TrialOracle"]:
        try:
            t = game_tensors(instance, cap)
        except InstanceTooLargeError as e:
            logger.warning("equilibrium oracle disabled, all-satisfied flags stand in for NE: %s", e)
            return None
        K, A = instance.num_players, instance.action_count
        k_star, opt = global_solution_mask(t)
        least = float(t.total_power[opt].min())
        return cls(
            utilities=t.utilities.reshape(K, -1),
            satisfied=t.satisfied.reshape(K, -1),
            nash=nash_mask(t).ravel(),
            optimal=opt.ravel(),
            optimal_power=least,
            max_satisfiable=k_star,
            strides=tuple(A ** (K - 1 - k) for k in range(K)),
        )

    def flat_index(self, indices: Sequence[int]) -> int:
        return sum(a * s for a, s in zip(indices, self.strides))


@dataclass
class TrialRecord:
    actions: np.ndarray             # (N, K) flat action indices
    satisfied: np.ndarray           # (N, K) bool
    total_power: np.ndarray         # (N,)
    at_se: np.ndarray               # (N,) bool
    at_ne: np.ndarray               # (N,) bool, SE proxy when nash_exact is False
    at_optimal: Optional[np.ndarray]
    optimal_power: Optional[float]
    num_power_levels: int
    nash_exact: bool = True
    seed: Optional[int] = None
    trace: List[tuple] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return int(self.actions.shape[0])

    def profile(self, n: int) -> ActionProfile:
        return tuple(action_from_index(a, self.num_power_levels) for a in self.actions[n])

    @staticmethod
    def _first(flags: Optional[np.ndarray]) -> Optional[int]:
        if flags is None or not flags.any():
            return None
        return int(np.argmax(flags))

    @property
    def first_ne_iteration(self) -> Optional[int]:
        return self._first(self.at_ne)

    @property
    def first_se_iteration(self) -> Optional[int]:
        return self._first(self.at_se)

    @property
    def first_optimal_iteration(self) -> Optional[int]:
        return self._first(self.at_optimal)

    @property
    def fraction_at_ne(self) -> float:
        return float(self.at_ne.mean())

    @property
    def fraction_at_se(self) -> float:
        return float(self.at_se.mean())

    @property
    def fraction_satisfied(self) -> np.ndarray:
        return self.satisfied.mean(axis=1)

    @property
    def power_ratio(self) -> np.ndarray:
        if not self.optimal_power:
            return np.full(self.iterations, np.nan)
        return self.total_power / self.optimal_power

    def first_visit(self, target: str) -> Optional[int]:
        return self.first_ne_iteration if Target(target) is Target.NE else self.first_se_iteration

    def fraction_at(self, target: str) -> float:
        return self.fraction_at_ne if Target(target) is Target.NE else self.fraction_at_se


def _utilities_without_oracle(instance: NetworkInstance, profile: ActionProfile) -> Tuple[np.ndarray, np.ndarray]:
    sat = sinr_vector(instance, profile) >= instance.sinr_threshold
    powers = instance.power_levels[[a.power_index for a in profile]]
    u = ((instance.max_power - powers) / instance.max_power + instance.beta * sat) / (1.0 + instance.beta)
    return u, sat


def run_trial(
    instance: NetworkInstance,
    epsilon: float,
    iterations: int,
    seed: int,
    oracle: Optional[TrialOracle] = None,
    params: Optional[TeParams] = None,
    trace: bool = False,
) -> TrialRecord:
    """One synchronous TE run: every player picks, utilities are fed back, states update."""
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be >= 1, got {iterations}")
    K, C, Q = instance.num_players, instance.num_channels, instance.num_power_levels
    if params is None:
        params = TeParams(epsilon=epsilon, num_players=K)
    elif params.epsilon != epsilon:
        raise InvalidParameterError(f"params.epsilon={params.epsilon} disagrees with epsilon={epsilon}")
    rng = np.random.default_rng(seed)
    states: List[TeState] = [initial_state(C, Q, rng) for _ in range(K)]
    levels = instance.power_levels

    actions = np.empty((iterations, K), dtype=np.int32)
    satisfied = np.empty((iterations, K), dtype=bool)
    total_power = np.empty(iterations)
    at_ne = np.empty(iterations, dtype=bool)
    at_opt = np.empty(iterations, dtype=bool) if oracle is not None else None
    rows: List[tuple] = []

    for n in range(iterations):
        played: List[Action] = []
        for k in range(K):
            a, experimented = select_action(states[k], C, Q, params.epsilon, rng)
            states[k] = record_play(states[k], a, experimented)
            played.append(a)
        idx = [action_index(a, Q) for a in played]
        if oracle is not None:
            flat = oracle.flat_index(idx)
            u = oracle.utilities[:, flat]
            sat = oracle.satisfied[:, flat]
            at_ne[n] = oracle.nash[flat]
            at_opt[n] = oracle.optimal[flat]
        else:
            u, sat = _utilities_without_oracle(instance, tuple(played))
        for k in range(K):
            states[k] = update(states[k], u[k], params, rng)
        actions[n] = idx
        satisfied[n] = sat
        total_power[n] = sum(levels[a.power_index] for a in played)
        if trace:
            for k, s in enumerate(states):
                rows.append(
                    (n, k, s.mood.value, played[k].channel, played[k].power_index, float(u[k]), s.benchmark_utility)
                )

    at_se = satisfied.all(axis=1)
    if oracle is None:
        at_ne = at_se.copy()
    return TrialRecord(
        actions=actions,
        satisfied=satisfied,
        total_power=total_power,
        at_se=at_se,
        at_ne=at_ne,
        at_optimal=at_opt,
        optimal_power=oracle.optimal_power if oracle is not None else None,
        num_power_levels=Q,
        nash_exact=oracle is not None,
        seed=seed,
        trace=rows,
    )


@lru_cache(maxsize=4)
def _prepared(instance_config: InstanceConfig, cap: Optional[int]) -> Tuple[NetworkInstance, Optional[TrialOracle]]:
    instance = instance_config.build()
    return instance, TrialOracle.build(instance, cap)


# filled by the pool initializer so workers reuse the parent's oracle tables
_shared: Dict[Tuple[InstanceConfig, Optional[int]], Tuple[NetworkInstance, Optional[TrialOracle]]] = {}


def _install_shared(key: Tuple[InstanceConfig, Optional[int]], prepared: Tuple[NetworkInstance, Optional[TrialOracle]]) -> None:
    _shared[key] = prepared


def _trial_job(job: Tuple[InstanceConfig, Optional[int], float, int, int, bool]) -> TrialRecord:
    instance_config, cap, epsilon, iterations, seed, trace = job
    key = (instance_config, cap)
    instance, oracle = _shared[key] if key in _shared else _prepared(instance_config, cap)
    return run_trial(instance, epsilon, iterations, seed, oracle=oracle, trace=trace)


def run_experiment(config: ExperimentConfig) -> List[TrialRecord]:
    instance_config = config.instance_config()
    trace = config.trace or "trace" in config.metrics
    jobs = [
        (instance_config, config.enumeration_cap, config.epsilon, config.iterations, config.seed + i, trace)
        for i in range(config.trials)
    ]
    prepared = _prepared(instance_config, config.enumeration_cap)
    instance = prepared[0]
    if not instance.satisfies_beta_condition:
        logger.warning("beta=%.3g does not exceed K=%d; equilibrium selection is not guaranteed", instance.beta, instance.num_players)
    logger.info(
        "running %d trial(s) x %d iterations (K=%d, C=%d, Q=%d, eps=%g, %s)",
        config.trials, config.iterations, instance.num_players, instance.num_channels,
        instance.num_power_levels, config.epsilon, instance.channel,
    )
    if config.workers > 1 and config.trials > 1:
        with ProcessPoolExecutor(
            max_workers=config.workers,
            initializer=_install_shared,
            initargs=((instance_config, config.enumeration_cap), prepared),
        ) as pool:
            # map keeps trial order
            return list(pool.map(_trial_job, jobs))
    return [_trial_job(job) for job in jobs]


def pooled_occupancy(records: Iterable[TrialRecord], target: str = "ne") -> float:
    hits = 0
    total = 0
    for r in records:
        flags = r.at_ne if Target(target) is Target.NE else r.at_se
        hits += int(flags.sum())
        total += flags.size
    if total == 0:
        raise ValueError("no iterations to pool")
    return hits / total


def estimate_occupancy(config: ExperimentConfig) -> float:
    return pooled_occupancy(run_experiment(config), config.target)


def mean_first_passage(records: Sequence[TrialRecord], target: str = "ne") -> Optional[float]:
    firsts = [r.first_visit(target) for r in records]
    reached = [f for f in firsts if f is not None]
    if len(reached) < len(firsts):
        logger.warning("%d of %d trials never reached the %s", len(firsts) - len(reached), len(firsts), target.upper())
    if not reached:
        return None
    return float(np.mean(reached))


def dtmc_prediction(config: ExperimentConfig) -> dict:
    """Chain predictions for the config; NaN where the chain is undefined (C <= K, Q_S = 0)."""
    instance = config.instance_config().build()
    target = Target(config.target)
    try:
        params = DtmcParams.from_instance(instance, config.epsilon, config.delta_u)
        model = transition_probs(params, target)
        lower, upper = bounds_T(params, target)
        return {
            "dtmc_occupancy": occupancy(params, target),
            "chain_occupancy": stationary_occupancy(model),
            "dtmc_exact": hitting_time(model),
            "bound_lo": lower,
            "bound_hi": upper,
        }
    except (InvalidParameterError, UnreachableTargetError) as e:
        logger.warning("no chain prediction for K=%d C=%d: %s", instance.num_players, instance.num_channels, e)
        return {key: np.nan for key in ("dtmc_occupancy", "chain_occupancy", "dtmc_exact", "bound_lo", "bound_hi")}


OCCUPANCY_COLUMNS = ["K", "C", "Q", "eps", "channel", "target", "sim_occupancy", "dtmc_occupancy", "chain_occupancy"]
PASSAGE_COLUMNS = ["K", "C", "Q", "eps", "target", "sim_mean", "dtmc_exact", "bound_lo", "bound_hi"]
SWEEP_COLUMNS = [
    "K", "C", "Q", "eps", "channel", "target", "metric", "simulated", "predicted", "chain_predicted", "bound_lo", "bound_hi",
]


def sweep_rows(config: ExperimentConfig, records: Sequence[TrialRecord]) -> List[dict]:
    """Occupancy and first-passage rows for one parameter combination."""
    ic = config.instance_config()
    prediction = dtmc_prediction(config)
    key = {
        "K": ic.num_players,
        "C": ic.num_channels,
        "Q": ic.num_power_levels,
        "eps": config.epsilon,
        "channel": ic.channel,
        "target": config.target,
    }
    passage = mean_first_passage(records, config.target)
    return [
        {
            **key,
            "metric": "occupancy",
            "simulated": pooled_occupancy(records, config.target),
            "predicted": prediction["dtmc_occupancy"],
            "chain_predicted": prediction["chain_occupancy"],
            "bound_lo": np.nan,
            "bound_hi": np.nan,
        },
        {
            **key,
            "metric": "first_passage",
            "simulated": np.nan if passage is None else passage,
            "predicted": prediction["dtmc_exact"],
            "chain_predicted": np.nan,
            "bound_lo": prediction["bound_lo"],
            "bound_hi": prediction["bound_hi"],
        },
    ]


def sweep(configs: Iterable[ExperimentConfig]) -> pd.DataFrame:
    """One row per (parameter combination, metric): occupancy and first passage."""
    rows = []
    for config in configs:
        rows.extend(sweep_rows(config, run_experiment(config)))
        last = rows[-1]
        logger.info("sweep point K=%d C=%d Q=%d %s done", last["K"], last["C"], last["Q"], last["channel"])
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def split_sweep(df: pd.DataFrame) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Long sweep table -> (occupancy, passage) tables in their CSV layouts."""
    occ = df[df["metric"] == "occupancy"].rename(
        columns={"simulated": "sim_occupancy", "predicted": "dtmc_occupancy", "chain_predicted": "chain_occupancy"}
    )
    passage = df[df["metric"] == "first_passage"].rename(
        columns={"simulated": "sim_mean", "predicted": "dtmc_exact"}
    )
    return (
        occ[OCCUPANCY_COLUMNS].reset_index(drop=True),
        passage[PASSAGE_COLUMNS].reset_index(drop=True),
    )


def standard_sweep_configs(
    num_players: int = 3,
    num_channels: int = 4,
    q_values: Iterable[int] = range(6, 11),
    channels: Iterable[str] = ("simplified", "rayleigh"),
    epsilon: float = 0.02,
    iterations: int = 1_000_000,
    trials: int = 1,
    target: str = "ne",
    seed: int = 0,
) -> List[ExperimentConfig]:
    configs = []
    for channel in channels:
        for Q in q_values:
            ic = InstanceConfig(K=num_players, C=num_channels, Q=Q, channel=channel, seed=seed)
            configs.append(
                ExperimentConfig(
                    instance=ic, epsilon=epsilon, iterations=iterations, trials=trials, target=target, seed=seed
                )
            )
    return configs


@dataclass
class Fig5Result:
    curves: pd.DataFrame
    mean_first_all_satisfied: Optional[float]
    mean_first_optimal: Optional[float]
    trials: int


def average_curves(records: Sequence[TrialRecord]) -> pd.DataFrame:
    """Per-iteration averages across trials of fraction satisfied and power ratio."""
    n = records[0].iterations
    frac = np.zeros(n)
    ratio = np.zeros(n)
    counted = np.zeros(n)
    for r in records:
        frac += r.fraction_satisfied
        pr = r.power_ratio
        ok = ~np.isnan(pr)
        ratio[ok] += pr[ok]
        counted += ok
    # NaN where no trial has a nonzero optimum
    mean_ratio = np.where(counted > 0, ratio / np.maximum(counted, 1), np.nan)
    return pd.DataFrame({
        "iteration": np.arange(n),
        "mean_frac_satisfied": frac / len(records),
        "mean_power_ratio": mean_ratio,
    })


def fig5_protocol(config: ExperimentConfig) -> Fig5Result:
    records = run_experiment(config)
    optimal = [r.first_optimal_iteration for r in records if r.at_optimal is not None]
    optimal = [f for f in optimal if f is not None]
    return Fig5Result(
        curves=average_curves(records),
        mean_first_all_satisfied=mean_first_passage(records, "se"),
        mean_first_optimal=float(np.mean(optimal)) if optimal else None,
        trials=len(records),
    )


def random_profile_satisfaction(instance: NetworkInstance, samples: int, seed: int) -> float:
    """Mean fraction of satisfied links under uniformly random joint profiles."""
    rng = np.random.default_rng(seed)
    Q = instance.num_power_levels
    total = 0.0
    for _ in range(samples):
        draw = rng.integers(instance.action_count, size=instance.num_players)
        profile = tuple(action_from_index(a, Q) for a in draw)
        total += float((sinr_vector(instance, profile) >= instance.sinr_threshold).mean())
    return total / samples


def modal_nash(record: TrialRecord) -> Optional[ActionProfile]:
    """Most visited NE after the first passage."""
    first = record.first_ne_iteration
    if first is None:
        return None
    visits = Counter(
        tuple(row) for row in record.actions[first:][record.at_ne[first:]]
    )
    best, _ = visits.most_common(1)[0]
    return tuple(action_from_index(a, record.num_power_levels) for a in best)


def equilibrium_selection(
    instance: NetworkInstance, epsilon: float, iterations: int, seed: int, cap: Optional[int] = None
) -> Tuple[Optional[ActionProfile], bool]:
    """Run TE and report whether the modal NE maximises welfare among all NE."""
    oracle = TrialOracle.build(instance, cap)
    if oracle is None:
        raise InstanceTooLargeError("equilibrium selection needs the exact NE oracle")
    record = run_trial(instance, epsilon, iterations, seed, oracle=oracle)
    modal = modal_nash(record)
    if modal is None:
        return None, False
    report = equilibrium_report(instance, cap)
    return modal, modal in report.welfare_maximal_nash
