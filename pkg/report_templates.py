import math
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
from pydantic import BaseModel

from channel_model import ActionProfile, NetworkInstance, sinr_vector
from game_core import EquilibriumReport, evaluate


class ProfileEntry(BaseModel):
    channels: List[int]
    power_indices: List[int]
    powers: List[float]
    sinr: List[float]
    satisfied: List[bool]
    welfare: float


class EquilibriumPayload(BaseModel):
    instance: Dict[str, Any]
    max_satisfiable: int
    counts: Dict[str, int]
    nash: List[ProfileEntry]
    efficient_satisfaction: List[ProfileEntry]
    optimal: List[ProfileEntry]
    nash_optimal: List[ProfileEntry]
    welfare_maximal_nash: List[ProfileEntry]
    truncated: bool


class TrialSummary(BaseModel):
    seed: Optional[int]
    iterations: int
    nash_exact: bool
    first_ne_iteration: Optional[int]
    first_se_iteration: Optional[int]
    first_optimal_iteration: Optional[int]
    fraction_at_ne: float
    fraction_at_se: float
    final_fraction_satisfied: float


def build_profile_entry(instance: NetworkInstance, profile: ActionProfile) -> ProfileEntry:
    out = evaluate(instance, profile)
    return ProfileEntry(
        channels=[a.channel for a in profile],
        power_indices=[a.power_index for a in profile],
        powers=[float(instance.power(a)) for a in profile],
        sinr=[float(s) for s in sinr_vector(instance, out.profile)],
        satisfied=[bool(s) for s in out.satisfied],
        welfare=out.welfare,
    )


def _entries(instance: NetworkInstance, profiles: Iterable[ActionProfile], limit: int) -> List[ProfileEntry]:
    return [build_profile_entry(instance, p) for p in sorted(profiles)[:limit]]


def build_equilibrium_report(
    instance: NetworkInstance, report: EquilibriumReport, limit: int = 50
) -> EquilibriumPayload:
    """Listing capped at `limit` profiles per set; counts are always complete."""
    sets = {
        "nash": report.nash_profiles,
        "satisfaction": report.satisfaction_profiles,
        "efficient_satisfaction": report.efficient_satisfaction_profiles,
        "optimal": report.opt_solutions,
        "nash_optimal": report.nash_optimal,
        "nash_max_satisfied": report.nash_max_satisfied,
        "welfare_maximal_nash": report.welfare_maximal_nash,
    }
    return EquilibriumPayload(
        instance=instance.to_config(),
        max_satisfiable=report.max_satisfiable,
        counts={k: len(v) for k, v in sets.items()},
        nash=_entries(instance, report.nash_profiles, limit),
        efficient_satisfaction=_entries(instance, report.efficient_satisfaction_profiles, limit),
        optimal=_entries(instance, report.opt_solutions, limit),
        nash_optimal=_entries(instance, report.nash_optimal, limit),
        welfare_maximal_nash=_entries(instance, report.welfare_maximal_nash, limit),
        truncated=any(len(v) > limit for v in sets.values()),
    )


def build_analysis_row(row: Dict[str, Any]) -> Dict[str, Any]:
    out = {}
    for k, v in row.items():
        if isinstance(v, np.generic):
            v = v.item()
        # JSON has no inf/nan
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        out[k] = v
    return out


def build_trial_summary(record) -> TrialSummary:
    return TrialSummary(
        seed=record.seed,
        iterations=record.iterations,
        nash_exact=record.nash_exact,
        first_ne_iteration=record.first_ne_iteration,
        first_se_iteration=record.first_se_iteration,
        first_optimal_iteration=record.first_optimal_iteration,
        fraction_at_ne=record.fraction_at_ne,
        fraction_at_se=record.fraction_at_se,
        final_fraction_satisfied=float(record.fraction_satisfied[-1]),
    )
