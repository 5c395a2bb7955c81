import itertools

import numpy as np
import pytest

from channel_model import InvalidParameterError, make_simplified_instance, sample_rayleigh_instance
from dtmc_analysis import (
    DISCONTENT,
    EQ,
    DtmcModel,
    DtmcParams,
    ModelMismatchError,
    Target,
    analyze,
    bounds_T,
    hitting_time,
    hitting_times,
    occupancy,
    q_s,
    stationary_occupancy,
    transition_probs,
)


GRID = [
    (K, C, Q, eps)
    for K, C, Q, eps in itertools.product((2, 3, 4), (4, 5, 6), (6, 8, 10), (0.01, 0.02))
    if C > K
]


def _params(K, C, Q, eps, du=0.0, qs=None):
    if qs is None:
        qs = q_s(make_simplified_instance(K, C, Q, 10.0, 1.0, 3.0, K + 1.0))
    return DtmcParams(K, C, Q, eps, du, qs)


def test_q_s_examples():
    assert q_s(make_simplified_instance(3, 4, 6, 10.0, 1.0, 3.0, 4.0)) == 4
    assert q_s(make_simplified_instance(3, 4, 6, 10.0, 1.0, 20.0, 4.0)) == 0
    assert q_s(make_simplified_instance(3, 4, 6, 10.0, 1.0, 1e-9, 4.0)) == 5
    with pytest.raises(ModelMismatchError):
        q_s(sample_rayleigh_instance(3, 4, 6, 10.0, 1.0, 3.0, 4.0, seed=1))


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        DtmcParams(4, 4, 6, 0.02)
    with pytest.raises(InvalidParameterError):
        DtmcParams(3, 4, 1, 0.02)
    with pytest.raises(InvalidParameterError):
        DtmcParams(3, 4, 6, 0.0)
    with pytest.raises(InvalidParameterError):
        transition_probs(DtmcParams(3, 4, 6, 0.02, satisfying_levels=0), Target.SE)


def test_from_instance_uses_simplified_twin():
    rayleigh = sample_rayleigh_instance(3, 4, 6, 10.0, 1.0, 3.0, 4.0, seed=1)
    assert DtmcParams.from_instance(rayleigh, 0.02).satisfying_levels == 4


def test_transition_examples():
    model = transition_probs(_params(4, 5, 8, 0.02), Target.NE)
    assert model.probability(DISCONTENT, EQ) == pytest.approx(0.05)
    assert model.probability(EQ, DISCONTENT) == pytest.approx(4.41e-4, rel=1e-3)
    assert model.states == ("Eq", "C3", "C2", "C1", "C0", "D")
    tiny = transition_probs(_params(4, 5, 8, 1e-6), Target.NE)
    assert tiny.probability(EQ, DISCONTENT) < 1e-10


@pytest.mark.parametrize("target", [Target.NE, Target.SE])
def test_rows_are_stochastic(target):
    for K, C, Q, eps in GRID:
        P = transition_probs(_params(K, C, Q, eps), target).transition_matrix
        assert np.all(P >= 0) and np.all(P <= 1)
        assert np.max(np.abs(P.sum(axis=1) - 1.0)) <= 1e-12


def test_model_rejects_non_stochastic_rows():
    with pytest.raises(InvalidParameterError):
        DtmcModel(Target.NE, (EQ, "x"), np.array([[1.0, 0.0], [0.5, 0.6]]))


def test_two_state_hitting_time_is_geometric():
    p = 0.125
    model = DtmcModel(Target.NE, (EQ, "x"), np.array([[1.0, 0.0], [p, 1.0 - p]]))
    assert hitting_time(model, start="x") == pytest.approx(1.0 / p)
    np.testing.assert_allclose(hitting_times(model), [0.0, 8.0])


def test_upper_bound_example():
    lower, upper = bounds_T(_params(3, 4, 6, 0.02), Target.NE)
    assert upper == pytest.approx(3117, rel=0.01)
    assert lower < upper


def test_se_bounds_match_ne_with_one_satisfying_level():
    p = _params(3, 4, 6, 0.02, qs=1)
    assert bounds_T(p, Target.SE) == pytest.approx(bounds_T(p, Target.NE))


def test_hitting_time_is_bracketed_by_bounds():
    for K, C, Q, eps in GRID:
        p = _params(K, C, Q, eps)
        for target in (Target.NE, Target.SE):
            lower, upper = bounds_T(p, target)
            exact = hitting_time(transition_probs(p, target))
            assert lower <= exact <= upper, (K, C, Q, eps, target)
        t_ne = hitting_time(transition_probs(p, Target.NE))
        t_se = hitting_time(transition_probs(p, Target.SE))
        assert t_se <= t_ne


def test_hitting_time_grows_with_q():
    times = [hitting_time(transition_probs(_params(3, 4, Q, 0.02), Target.NE)) for Q in range(6, 11)]
    assert all(a < b for a, b in zip(times, times[1:]))


def test_occupancy_properties():
    values = [occupancy(_params(4, 5, 8, eps), Target.NE) for eps in (0.01, 0.02, 0.05)]
    assert all(0.0 < v < 1.0 for v in values)
    assert values[0] > values[1] > values[2]
    assert occupancy(_params(4, 5, 8, 1e-6), Target.NE) > 0.99
    assert occupancy(_params(4, 5, 8, 0.02), Target.SE) > values[1]


def test_stationary_occupancy_is_a_probability():
    model = transition_probs(_params(3, 4, 6, 0.02), Target.NE)
    assert 0.0 < stationary_occupancy(model) < 1.0


def test_analyze_row():
    row = analyze(_params(3, 4, 6, 0.02), "ne")
    assert set(row) == {
        "K", "C", "Q", "Q_S", "eps", "du", "target", "p_eq_d", "p_d_eq",
        "t_lower", "t_upper", "t_exact", "occupancy", "chain_occupancy",
    }
    assert row["Q_S"] == 4 and row["target"] == "ne"
    assert row["t_lower"] <= row["t_exact"] <= row["t_upper"]
