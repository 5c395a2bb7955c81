import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from channel_model import InvalidParameterError, make_simplified_instance, sample_rayleigh_instance
from config import ExperimentConfig, InstanceConfig
from dtmc_analysis import DtmcParams, Target, occupancy, stationary_occupancy, transition_probs
from game_core import find_nash, is_nash, solve_global
from te_learning import TeParams
from sim_harness import (
    TrialOracle,
    average_curves,
    equilibrium_selection,
    estimate_occupancy,
    fig5_protocol,
    mean_first_passage,
    modal_nash,
    standard_sweep_configs,
    pooled_occupancy,
    random_profile_satisfaction,
    run_experiment,
    run_trial,
    split_sweep,
    sweep,
)


def _config(**kw):
    instance = kw.pop("instance", InstanceConfig(K=2, C=3, Q=4))
    return ExperimentConfig(instance=instance, **{"iterations": 2000, "trials": 2, "workers": 1, **kw})


def test_oracle_tables_match_game_core(two_link):
    oracle = TrialOracle.build(two_link)
    k_star, solutions = solve_global(two_link)
    assert oracle.max_satisfiable == k_star
    assert oracle.optimal_power == pytest.approx(8.0)
    ne = find_nash(two_link)
    Q = two_link.num_power_levels
    assert int(oracle.nash.sum()) == len(ne)
    for p in ne:
        assert oracle.nash[oracle.flat_index([a.channel * Q + a.power_index for a in p])]
    assert oracle.optimal.sum() == len(solutions)


def test_oracle_respects_cap(two_link):
    assert TrialOracle.build(two_link, cap=10) is None


def _single_link():
    return make_simplified_instance(1, 2, 6, 10.0, 1.0, 3.0, 2.0)


def test_single_link_learns_least_satisfying_power():
    inst = _single_link()
    record = run_trial(inst, 0.02, 20_000, seed=0, oracle=TrialOracle.build(inst))
    assert record.first_ne_iteration is not None
    tail = record.actions[-2000:, 0] % inst.num_power_levels
    assert np.bincount(tail).argmax() == 2


def test_identical_seeds_identical_records(two_link):
    oracle = TrialOracle.build(two_link)
    a = run_trial(two_link, 0.05, 1500, seed=9, oracle=oracle, trace=True)
    b = run_trial(two_link, 0.05, 1500, seed=9, oracle=oracle, trace=True)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.at_ne, b.at_ne)
    assert a.trace == b.trace
    assert len(a.trace) == 1500 * 2


def test_flags_are_consistent(two_link):
    record = run_trial(two_link, 0.05, 2000, seed=4, oracle=TrialOracle.build(two_link))
    np.testing.assert_array_equal(record.at_se, record.fraction_satisfied == 1.0)
    hits = np.flatnonzero(record.at_ne)
    for n in hits[:: max(1, len(hits) // 25)]:
        assert is_nash(two_link, record.profile(int(n)))
    assert record.power_ratio.shape == (2000,)


def test_without_oracle_ne_flags_fall_back_to_se(two_link):
    record = run_trial(two_link, 0.05, 500, seed=1)
    assert not record.nash_exact
    np.testing.assert_array_equal(record.at_ne, record.at_se)
    assert record.at_optimal is None
    assert np.isnan(record.power_ratio).all()


def test_zero_iterations_rejected(two_link):
    with pytest.raises(InvalidParameterError):
        run_trial(two_link, 0.02, 0, seed=0)
    with pytest.raises(ValidationError):
        _config(iterations=0)


def test_experiment_seeds_and_order():
    records = run_experiment(_config(seed=40, trials=3))
    assert [r.seed for r in records] == [40, 41, 42]
    again = run_experiment(_config(seed=40, trials=3))
    for a, b in zip(records, again):
        np.testing.assert_array_equal(a.actions, b.actions)


def test_occupancy_pools_iterations():
    records = run_experiment(_config())
    expected = sum(r.at_ne.sum() for r in records) / sum(r.iterations for r in records)
    assert pooled_occupancy(records, "ne") == pytest.approx(expected)
    assert 0.0 <= estimate_occupancy(_config()) <= 1.0


def test_mean_first_passage_skips_unreached(two_link):
    oracle = TrialOracle.build(two_link)
    reached = run_trial(two_link, 0.05, 100, seed=2, oracle=oracle)
    never = run_trial(two_link, 0.05, 100, seed=3, oracle=oracle)
    reached.at_ne[:] = False
    reached.at_ne[17] = True
    never.at_ne[:] = False
    assert mean_first_passage([reached, never], "ne") == 17.0
    assert mean_first_passage([never], "ne") is None


def test_small_eps_run_mostly_sits_at_equilibrium():
    inst = _single_link()
    record = run_trial(inst, 0.01, 200_000, seed=5, oracle=TrialOracle.build(inst))
    first = record.first_ne_iteration
    assert first is not None
    assert record.at_ne[first:].mean() > 0.9


def test_sweep_rows_and_split():
    configs = standard_sweep_configs(
        num_players=2, num_channels=3, q_values=[3, 4], channels=("simplified",),
        iterations=1000, trials=1,
    )
    df = sweep(configs)
    assert len(df) == 4
    assert set(df["metric"]) == {"occupancy", "first_passage"}
    occ = df[df["metric"] == "occupancy"]["simulated"]
    assert ((occ >= 0) & (occ <= 1)).all()
    occ_df, passage_df = split_sweep(df)
    assert list(occ_df.columns) == [
        "K", "C", "Q", "eps", "channel", "target", "sim_occupancy", "dtmc_occupancy", "chain_occupancy",
    ]
    assert list(passage_df.columns) == ["K", "C", "Q", "eps", "target", "sim_mean", "dtmc_exact", "bound_lo", "bound_hi"]
    expected = occupancy(DtmcParams(2, 3, 3, 0.02, 0.0, 2), Target.NE)
    assert occ_df.loc[0, "dtmc_occupancy"] == pytest.approx(expected)
    chain = stationary_occupancy(transition_probs(DtmcParams(2, 3, 3, 0.02, 0.0, 2), Target.NE))
    assert occ_df.loc[0, "chain_occupancy"] == pytest.approx(chain)


def test_sweep_of_nothing_is_empty():
    df = sweep([])
    assert isinstance(df, pd.DataFrame) and df.empty


def test_chain_prediction_missing_when_c_not_above_k():
    cfg = _config(instance=InstanceConfig(K=2, C=2, Q=3), iterations=200, trials=1)
    df = sweep([cfg])
    assert df["predicted"].isna().all()


def test_standard_sweep_grid():
    configs = standard_sweep_configs()
    assert len(configs) == 10
    assert {c.instance.num_power_levels for c in configs} == set(range(6, 11))
    assert {c.instance.channel for c in configs} == {"simplified", "rayleigh"}


def test_curves_shape_and_baseline():
    cfg = _config(instance=InstanceConfig(K=2, C=3, Q=4), iterations=300, trials=4, target="se")
    result = fig5_protocol(cfg)
    assert list(result.curves.columns) == ["iteration", "mean_frac_satisfied", "mean_power_ratio"]
    assert len(result.curves) == 300
    assert result.trials == 4
    baseline = random_profile_satisfaction(make_simplified_instance(2, 3, 4, 10.0, 1.0, 3.0, 3.0), 20_000, seed=0)
    # round 0 is a uniform random profile for every trial
    curves = average_curves(run_experiment(_config(iterations=1, trials=400, seed=100)))
    assert curves.loc[0, "mean_frac_satisfied"] == pytest.approx(baseline, abs=0.08)


def test_modal_nash_is_a_visited_equilibrium():
    inst = _single_link()
    record = run_trial(inst, 0.02, 20_000, seed=3, oracle=TrialOracle.build(inst))
    assert modal_nash(record) in find_nash(inst)
    record.at_ne[:] = False
    assert modal_nash(record) is None


def test_params_epsilon_must_match(two_link):
    with pytest.raises(InvalidParameterError):
        run_trial(two_link, 0.02, 10, seed=0, params=TeParams(epsilon=0.05, num_players=2))
    a = run_trial(two_link, 0.05, 300, seed=0, params=TeParams(epsilon=0.05, num_players=2))
    b = run_trial(two_link, 0.05, 300, seed=0)
    np.testing.assert_array_equal(a.actions, b.actions)


def test_worker_pool_matches_inline_run():
    inline = run_experiment(_config(trials=3, iterations=500, seed=11))
    pooled = run_experiment(_config(trials=3, iterations=500, seed=11, workers=2))
    assert [r.seed for r in pooled] == [11, 12, 13]
    for a, b in zip(inline, pooled):
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.at_ne, b.at_ne)


@pytest.mark.slow
def test_fig5_milestones():
    cfg = ExperimentConfig(
        instance=InstanceConfig(K=4, C=5, Q=8, beta=5.0), epsilon=0.02,
        iterations=6000, trials=200, target="se",
    )
    result = fig5_protocol(cfg)
    # gamma=3 leaves five of eight levels satisfying, so full satisfaction comes early
    assert result.mean_first_all_satisfied == pytest.approx(241, rel=0.25)
    assert result.mean_first_optimal == pytest.approx(2840, rel=0.3)
    assert result.mean_first_all_satisfied < result.mean_first_optimal
    last = result.curves.iloc[-1]
    assert last["mean_frac_satisfied"] > 0.9
    assert 1.0 < last["mean_power_ratio"] < 1.25


@pytest.mark.slow
def test_fig5_stricter_threshold_delays_satisfaction():
    def run(gamma):
        cfg = ExperimentConfig(
            instance=InstanceConfig(K=4, C=5, Q=8, beta=5.0, gamma=gamma), epsilon=0.02,
            iterations=6000, trials=60, target="se",
        )
        return fig5_protocol(cfg).mean_first_all_satisfied

    loose, strict = run(3.0), run(8.0)
    assert strict is not None
    assert strict > 1.25 * loose


@pytest.mark.slow
@pytest.mark.parametrize("Q", [6, 8, 10])
def test_simplified_occupancy_between_closed_form_and_chain(Q):
    cfg = ExperimentConfig(
        instance=InstanceConfig(K=3, C=4, Q=Q), epsilon=0.02, iterations=1_000_000, trials=1,
    )
    params = DtmcParams.from_instance(cfg.instance.build(), 0.02)
    closed = occupancy(params, Target.NE)
    chain = stationary_occupancy(transition_probs(params, Target.NE))
    assert closed < chain
    assert closed - 0.03 <= estimate_occupancy(cfg) <= chain + 0.03


@pytest.mark.slow
@pytest.mark.parametrize("Q", [6, 8, 10])
def test_rayleigh_occupancy_near_closed_form(Q):
    cfg = ExperimentConfig(
        instance=InstanceConfig(K=3, C=4, Q=Q, channel="rayleigh", seed=Q), epsilon=0.02,
        iterations=1_000_000, trials=1,
    )
    predicted = occupancy(DtmcParams.from_instance(cfg.instance.build(), 0.02), Target.NE)
    assert estimate_occupancy(cfg) == pytest.approx(predicted, abs=0.15)


@pytest.mark.slow
def test_pooled_occupancy_survives_splitting_the_run():
    instance = InstanceConfig(K=3, C=4, Q=6)
    long_run = run_experiment(ExperimentConfig(instance=instance, iterations=600_000, trials=1, seed=1))
    short_runs = run_experiment(ExperimentConfig(instance=instance, iterations=60_000, trials=10, seed=100))
    blocks = long_run[0].at_ne.reshape(10, -1).mean(axis=1)
    per_trial = np.array([r.fraction_at_ne for r in short_runs])
    sigma = np.sqrt(blocks.var(ddof=1) / 10 + per_trial.var(ddof=1) / 10)
    gap = pooled_occupancy(long_run, "ne") - pooled_occupancy(short_runs, "ne")
    assert abs(gap) <= 3 * sigma


@pytest.mark.slow
def test_time_to_equilibrium_grows_with_q():
    configs = standard_sweep_configs(q_values=[6, 10], channels=("simplified",), iterations=20_000, trials=60)
    _, passage = split_sweep(sweep(configs))
    passage = passage.sort_values("Q").reset_index(drop=True)
    assert passage.loc[0, "dtmc_exact"] < passage.loc[1, "dtmc_exact"]
    assert passage.loc[0, "sim_mean"] < passage.loc[1, "sim_mean"]


@pytest.mark.slow
def test_tiny_eps_single_link_almost_always_at_equilibrium():
    cfg = ExperimentConfig(instance=InstanceConfig(K=1, C=1, Q=2, beta=20.0), epsilon=0.001, iterations=1_000_000)
    assert estimate_occupancy(cfg) > 0.99


@pytest.mark.slow
def test_equilibrium_selection_prefers_welfare_maximal_nash():
    rng = np.random.default_rng(77)
    hits = tried = 0
    while tried < 20:
        inst = sample_rayleigh_instance(2, 2, 3, 10.0, 1.0, 3.0, 3.0, seed=int(rng.integers(1 << 30)))
        if not find_nash(inst):
            continue
        _, maximal = equilibrium_selection(inst, 0.02, 100_000, seed=tried)
        hits += maximal
        tried += 1
    assert hits >= 16
