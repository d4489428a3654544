import warnings

import numpy as np
import pytest

from dpmle.dpmle import (FitOptions, count_distinct_states, fit_dpmle, fusion_gaps, gsf_order, merge_gamma,
                         merge_model, m_step_emission_penalized, penalized_objective, weighted_location_mle)
from dpmle.em import e_step, fit_mle
from dpmle.emissions import EmissionParams, update_nuisance
from dpmle.errors import DimensionError
from dpmle.hmm import CovariateLogit, Homogeneous, ParameterVector, gamma_hmm, log_likelihood
from dpmle.penalty import PenaltyConfig
from dpmle.scenarios import BASE_GAMMA, ScenarioConfig, simulate
from dpmle.selection import default_m, random_init, to_nonstationary

from conftest import one_series


def _gamma_em(means, shapes=None):
    n = len(means)
    return EmissionParams(("gamma",), ({"mean": means, "shape": shapes or [2.0] * n},))


# -- GSF ordering ------------------------------------------------------------------------------------


def test_one_dimensional_order_is_sort():
    assert gsf_order([3.0, 1.0, 2.0]).tolist() == [1, 2, 0]


def test_nearest_neighbour_chain():
    v = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]])
    assert gsf_order(v).tolist() == [0, 2, 1]


def test_single_state_order():
    assert gsf_order([[2.0, 5.0]]).tolist() == [0]
    assert gsf_order([7.0]).tolist() == [0]


def test_chain_follows_neighbours_not_norms():
    # norms 1, 2.2, 1.5 but the chain from the smallest goes to its nearest point
    v = np.array([[1.0, 0.0], [2.2, 0.0], [0.0, 1.5]])
    assert gsf_order(v).tolist() == [0, 1, 2]


# -- counting ------------------------------------------------------------------------------------------


def test_exact_tie_merges():
    n, groups = count_distinct_states(_gamma_em([1.0, 1.0, 5.0]), 1e-3)
    assert n == 2
    assert sorted(map(sorted, groups)) == [[0, 1], [2]]


def test_separated_means_stay_distinct():
    assert count_distinct_states(_gamma_em([1.0, 3.0, 5.5]), 1e-3)[0] == 3


def test_threshold_rule():
    # threshold = merge_tol * (max - min) = 1e-3 * 5
    eps = 0.5 * 1e-3 * 5.0
    assert count_distinct_states(_gamma_em([2.0, 2.0 + eps, 7.0]), 1e-3)[0] == 2
    assert count_distinct_states(_gamma_em([2.0, 2.0 + 3 * eps, 7.0]), 1e-3)[0] == 3


def test_multivariate_counting_uses_vectors():
    em = EmissionParams(("gamma", "vonmises"),
                        ({"mean": [1.0, 1.0, 4.0], "shape": [2.0] * 3},
                         {"mean": [0.0] * 3, "kappa": [0.5, 0.5, 6.0]}))
    n, groups = count_distinct_states(em, 1e-3)
    assert n == 2


# -- merging -------------------------------------------------------------------------------------------


def test_uniform_tpm_merges_to_halves():
    np.testing.assert_allclose(merge_gamma(np.full((4, 4), 0.25), [[0, 1], [2, 3]]), 0.5)


def test_worked_merge_pattern():
    g = np.array([[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1], [0.1, 0.1, 0.7, 0.1], [0.1, 0.1, 0.1, 0.7]])
    m = merge_gamma(g, [[0, 1], [2], [3]])
    assert m[0, 0] == pytest.approx(0.8, abs=1e-15)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


def test_identity_grouping_returns_model():
    p = gamma_hmm([1, 3, 5.5], [1.5, 4, 12], BASE_GAMMA)
    assert merge_model(p, [[0], [1], [2]]) is p


def test_merge_model_weighted_emissions_and_delta():
    p = ParameterVector(np.array([0.1, 0.2, 0.7]), Homogeneous(np.asarray(BASE_GAMMA)),
                        _gamma_em([1.0, 1.2, 5.0], [2.0, 4.0, 8.0]))
    q = merge_model(p, [[1, 0], [2]], weights=np.array([1.0, 3.0, 1.0]))
    assert q.n_states == 2
    assert q.emissions.params[0]["mean"][0] == pytest.approx((1.0 + 3 * 1.2) / 4)
    np.testing.assert_allclose(q.delta, [0.3, 0.7])
    np.testing.assert_allclose(q.transition.gamma.sum(axis=1), 1.0, atol=1e-12)


def test_merge_groups_must_partition():
    p = gamma_hmm([1, 3, 5.5], [1.5, 4, 12], BASE_GAMMA)
    with pytest.raises(DimensionError):
        merge_model(p, [[0, 1]])


def test_merge_covariate_model_rows_stochastic(rng):
    beta = rng.normal(0, 0.5, (3, 3, 2))
    p = ParameterVector(np.full(3, 1 / 3), CovariateLogit(beta), _gamma_em([1.0, 1.0, 4.0]))
    cov = rng.normal(size=(100, 1))
    q = merge_model(p, [[0, 1], [2]], covariates=cov)
    G = q.transition.matrices(cov, 100)
    np.testing.assert_allclose(G.sum(axis=-1), 1.0, atol=1e-12)
    assert q.transition.beta.shape == (2, 2, 2)


# -- penalised location update -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def scen1():
    sim = simulate(ScenarioConfig(1, T=5000, seed=17))
    return sim.obs


def test_zero_lambda_is_weighted_mle(scen1):
    p = random_init(scen1, 4, rng=np.random.default_rng(3))
    s = e_step(scen1, p, per_time=False)
    em = update_nuisance(p.emissions, s.emission_stats)
    new = m_step_emission_penalized(s.emission_stats, PenaltyConfig(0.0, 1.0), em)
    ref = weighted_location_mle(em, s.emission_stats)
    np.testing.assert_allclose(new.locations(), ref.locations(), rtol=1e-6)


def test_identical_states_coincide_after_update(rng):
    y = rng.gamma(3.0, 1.0, 200)
    # two copies of the same state: same weights, same data
    em = _gamma_em([2.5, 3.5, 9.0], [3.0, 3.0, 3.0])
    w = np.column_stack([np.full(200, 0.5), np.full(200, 0.5), np.zeros(200)])
    w[:, 2] = 1e-3
    from dpmle.emissions import channel_stats

    stats = channel_stats(em, y, w)
    new = m_step_emission_penalized(stats, PenaltyConfig(lam=1.0, c_n=1.0, m=50.0), em)
    loc = new.locations()[:, 0]
    assert loc[0] == loc[1]


def test_small_penalty_recovers_scenario_means(scen1):
    p = gamma_hmm([0.8, 2.5, 6.0], [1.5, 4, 12], BASE_GAMMA)
    for _ in range(30):
        s = e_step(scen1, p, per_time=False)
        em = update_nuisance(p.emissions, s.emission_stats)
        em = m_step_emission_penalized(s.emission_stats, PenaltyConfig(lam=0.01, c_n=1.0), em)
        p = p.replace(emissions=em)
    np.testing.assert_allclose(np.sort(p.emissions.locations()[:, 0]), [1, 3, 5.5], rtol=0.05)


def test_update_never_worsens_surrogate(scen1):
    from dpmle.dpmle import _surrogate

    pen = PenaltyConfig(lam=0.1, c_n=1.0, m=70.0)
    for seed in range(5):
        p = random_init(scen1, 4, rng=np.random.default_rng(seed))
        s = e_step(scen1, p, per_time=False)
        em = update_nuisance(p.emissions, s.emission_stats)
        order, gaps = fusion_gaps(em)
        w = np.asarray(pen.derivative(gaps))
        new = m_step_emission_penalized(s.emission_stats, pen, em, order)
        assert _surrogate(new, s.emission_stats, w, order, None) >= _surrogate(em, s.emission_stats, w, order, None) - 1e-9


# -- the fit ---------------------------------------------------------------------------------------------


def test_penalties_off_recover_mle(scen1):
    init = random_init(scen1, 3, rng=np.random.default_rng(7))
    mle = fit_mle(scen1, init, tol=1e-10, max_iter=2000)
    fit = fit_dpmle(scen1, 3, PenaltyConfig(lam=0.0, c_n=1e-12), mle.params, FitOptions(tol=1e-12, max_iter=2000))
    assert fit.loglik == pytest.approx(mle.loglik, abs=1e-4)


def test_trace_is_monotone(scen1):
    init = random_init(scen1, 4, rng=np.random.default_rng(11))
    fit = fit_dpmle(scen1, 4, PenaltyConfig(lam=np.exp(3) / default_m(scen1), c_n=2.0, m=default_m(scen1)), init)
    assert np.all(np.diff(fit.trace) >= -1e-8)
    assert fit.objective == fit.trace[-1]


def test_scenario_one_selects_three(scen1):
    init = fit_mle(scen1, random_init(scen1, 4, rng=np.random.default_rng(1))).params
    m = default_m(scen1)
    fit = fit_dpmle(scen1, 4, PenaltyConfig(lam=np.exp(3.0) / m, c_n=2.0, m=m), init)
    assert fit.n_hat == 3
    np.testing.assert_allclose(np.sort(fit.merged.emissions.locations()[:, 0]), [1, 3, 5.5], rtol=0.1)


def test_objective_formula():
    em = _gamma_em([1.0, 3.0])
    pen = PenaltyConfig(lam=1.0, c_n=2.0)
    val = penalized_objective(-10.0, np.log([0.5, 0.5]), em, pen, None)
    # gap 2 lies in the quadratic part: 1 + (3.7 * 1 - (4 - 1) / 2) / 2.7
    assert val == pytest.approx(-10.0 + 2.0 * 2 * np.log(0.5) - (1 + (3.7 - 1.5) / 2.7))


def test_wrong_order_rejected(scen1):
    with pytest.raises(DimensionError):
        fit_dpmle(scen1, 4, PenaltyConfig(1.0, 1.0), random_init(scen1, 3, rng=np.random.default_rng(0)))


def test_unconverged_fit_warns(scen1):
    init = random_init(scen1, 4, rng=np.random.default_rng(5))
    with pytest.warns(RuntimeWarning):
        fit = fit_dpmle(scen1, 4, PenaltyConfig(1.0, 1.0), init, FitOptions(max_iter=2))
    assert not fit.converged


def test_nonstationary_fit_runs_and_is_monotone():
    sim = simulate(ScenarioConfig(6, T=1500, seed=9))
    obs = sim.obs
    init = to_nonstationary(fit_mle(obs, random_init(obs, 4, rng=np.random.default_rng(1), stationary=False),
                                    max_iter=100).params, 1)
    m = default_m(obs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = fit_dpmle(obs, 4, PenaltyConfig(lam=np.exp(3.0) / m, c_n=2.0, m=m), init, FitOptions(max_iter=100))
    assert np.all(np.diff(fit.trace) >= -1e-8)
    assert fit.merged.nonstationary
    assert 1 <= fit.n_hat <= 4


def test_bivariate_fit_runs():
    rng = np.random.default_rng(4)
    s = np.repeat(rng.integers(0, 2, 300), 5)
    step = rng.gamma(4.0, np.where(s == 0, 0.25, 1.0))
    from dpmle.emissions import wrap_angle

    angle = wrap_angle(rng.vonmises(0.0, np.where(s == 0, 0.5, 8.0)))
    from dpmle.hmm import ObservationSet

    obs = ObservationSet.from_arrays([np.column_stack([step, angle])])
    init = random_init(obs, 3, ("gamma", "vonmises"), rng=np.random.default_rng(0))
    init = fit_mle(obs, init, max_iter=100).params
    m = default_m(obs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = fit_dpmle(obs, 3, PenaltyConfig(lam=np.exp(3.0) / m, c_n=2.0, m=m), init, FitOptions(max_iter=200))
    assert np.all(np.diff(fit.trace) >= -1e-8)
    assert fit.n_hat in (2, 3)
    assert np.isfinite(log_likelihood(obs, fit.merged))
