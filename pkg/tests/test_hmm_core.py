import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmle.emissions import EmissionParams, wrap_angle
from dpmle.errors import DimensionError, DomainError, SingularChainError, UnderflowError
from dpmle.hmm import (CovariateLogit, Homogeneous, ObservationSet, ParameterVector, Series, forward_backward,
                       gamma_hmm, log_likelihood, occupancy_estimate, stationary_distribution,
                       transition_matrix_at, viterbi)
from dpmle.scenarios import BASE_GAMMA

from conftest import draw_values, one_series, random_model, random_tpm
from oracles import density_matrix, enumerate_loglik, enumerate_map_path, naive_posterior, power_stationary


# -- transition models ---------------------------------------------------------------------------


def test_zero_coefficients_give_uniform_rows():
    m = CovariateLogit(np.zeros((3, 3, 2)))
    np.testing.assert_allclose(transition_matrix_at(m, [0.7]), np.full((3, 3), 1 / 3), atol=1e-15)


def test_homogeneous_returned_unchanged():
    g = np.asarray(BASE_GAMMA)
    np.testing.assert_array_equal(transition_matrix_at(Homogeneous(g), [1.0, 2.0]), g)


def test_two_state_logit_hand_values():
    beta = np.zeros((2, 2, 2))
    beta[0, 1] = (0.0, 1.0)
    G = transition_matrix_at(CovariateLogit(beta), [np.log(2.0)])
    np.testing.assert_allclose(G, [[1 / 3, 2 / 3], [0.5, 0.5]], atol=1e-15)


def test_logit_rows_sum_to_one(rng):
    m = CovariateLogit(rng.normal(0, 3, (4, 4, 3)))
    G = m.matrices(rng.normal(0, 5, (50, 2)), 50)
    np.testing.assert_allclose(G.sum(axis=-1), 1.0, atol=1e-12)
    assert G.shape == (49, 4, 4)


def test_logit_covariate_length_checked():
    with pytest.raises(DimensionError):
        transition_matrix_at(CovariateLogit(np.zeros((2, 2, 2))), [1.0, 2.0])


def test_from_gamma_reproduces_matrix():
    g = np.asarray(BASE_GAMMA)
    m = CovariateLogit.from_gamma(g, 1)
    np.testing.assert_allclose(transition_matrix_at(m, [3.0]), g, atol=1e-14)


def test_homogeneous_rejects_non_stochastic():
    with pytest.raises(DomainError):
        Homogeneous(np.array([[0.5, 0.6], [0.5, 0.5]]))


# -- observation containers ----------------------------------------------------------------------


def test_series_length_and_covariate_rows_checked():
    with pytest.raises(DimensionError):
        ObservationSet([Series(np.array([1.0]))])
    with pytest.raises(DimensionError):
        Series(np.ones(4), np.ones((3, 1)))


def test_kinds_enforced():
    with pytest.raises(DomainError):
        ObservationSet([Series(np.array([1.0, -1.0]))], kinds=("positive",))
    with pytest.raises(DomainError):
        ObservationSet([Series(np.array([0.1, -np.pi]))], kinds=("angle",))
    ObservationSet([Series(np.array([np.nan, np.pi]))], kinds=("angle",))


def test_delta_must_be_simplex():
    em = EmissionParams(("normal",), ({"mean": [0, 1], "sd": [1, 1]},))
    with pytest.raises(DomainError):
        ParameterVector(np.array([0.6, 0.6]), Homogeneous(np.eye(2)), em)


def test_wrap_angle_interval():
    x = wrap_angle([np.pi, -np.pi, 3 * np.pi, 0.0, -3.5])
    assert np.all((x > -np.pi) & (x <= np.pi))
    assert x[0] == np.pi and x[1] == np.pi


# -- likelihood and forward-backward -------------------------------------------------------------


def test_single_state_loglik_is_sum_of_log_densities(rng):
    y = rng.gamma(2.0, 1.0, 30)
    p = gamma_hmm([2.0], [2.0], [[1.0]])
    F = density_matrix(("gamma",), p.emissions.params, y)
    assert log_likelihood(one_series(y), p) == pytest.approx(np.log(F).sum(), abs=1e-10)
    fb = forward_backward(one_series(y), p)
    np.testing.assert_allclose(fb.posterior[0], 1.0, atol=1e-12)


def test_single_observation_density():
    p = gamma_hmm([2.0], [3.0], [[1.0]])
    obs = ObservationSet([Series(np.array([1.5, np.nan]))])
    d = density_matrix(("gamma",), p.emissions.params, [1.5])[0, 0]
    assert log_likelihood(obs, p) == pytest.approx(np.log(d), abs=1e-12)


@pytest.mark.parametrize("n_cov", [0, 1])
def test_matches_path_enumeration(rng, n_cov):
    for _ in range(20):
        N = int(rng.integers(1, 4))
        T = int(rng.integers(2, 9))
        fam = ("gamma", "normal")[int(rng.integers(2))]
        p = random_model(rng, N, fam, n_cov)
        y = draw_values(rng, fam, T)
        cov = rng.normal(size=(T, n_cov)) if n_cov else None
        obs = one_series(y, cov)
        F = density_matrix((fam,), p.emissions.params, y)
        mats = p.transition.matrices(cov, T)
        assert abs(log_likelihood(obs, p) - enumerate_loglik(p.delta, mats, F)) < 1e-10


def test_two_state_three_step_brute_force():
    p = ParameterVector(np.array([0.6, 0.4]), Homogeneous(np.array([[0.9, 0.1], [0.3, 0.7]])),
                        EmissionParams(("normal",), ({"mean": [0.0, 2.0], "sd": [1.0, 0.5]},)))
    y = np.array([0.1, 1.8, 2.2])
    F = density_matrix(("normal",), p.emissions.params, y)
    total = 0.0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                G = p.transition.gamma
                total += p.delta[a] * F[0, a] * G[a, b] * F[1, b] * G[b, c] * F[2, c]
    assert log_likelihood(one_series(y), p) == pytest.approx(np.log(total), abs=1e-12)


def test_identity_alpha_beta_constant_over_time(rng):
    p = random_model(rng, 3, "gamma")
    y = rng.gamma(2, 2, 400)
    fb = forward_backward(one_series(y), p)
    la, lb = fb.log_alpha[0], fb.log_beta[0]
    ll = np.logaddexp.reduce(la + lb, axis=1)
    np.testing.assert_allclose(ll, fb.loglik, atol=1e-9)
    np.testing.assert_allclose(fb.posterior[0].sum(axis=1), 1.0, atol=1e-10)


def test_identical_emissions_give_uniform_posterior(rng):
    em = EmissionParams(("gamma",), ({"mean": [2.0] * 3, "shape": [3.0] * 3},))
    p = ParameterVector(np.full(3, 1 / 3), Homogeneous(np.full((3, 3), 1 / 3)), em)
    obs = one_series(rng.gamma(3, 1, 50))
    np.testing.assert_allclose(forward_backward(obs, p).posterior[0], 1 / 3, atol=1e-12)
    np.testing.assert_allclose(occupancy_estimate(obs, p), 1 / 3, atol=1e-12)


def test_posterior_matches_naive_smoother(rng):
    for n_cov in (0, 2):
        p = random_model(rng, 3, "normal", n_cov)
        y = rng.normal(0, 3, 12)
        cov = rng.normal(size=(12, n_cov)) if n_cov else None
        obs = one_series(y, cov)
        F = density_matrix(("normal",), p.emissions.params, y)
        post, L = naive_posterior(p.delta, p.transition.matrices(cov, 12), F)
        np.testing.assert_allclose(forward_backward(obs, p).posterior[0], post, atol=1e-12)
        np.testing.assert_allclose(occupancy_estimate(obs, p), post.mean(axis=0), atol=1e-10)


def test_occupancy_single_state():
    p = gamma_hmm([1.0], [2.0], [[1.0]])
    np.testing.assert_allclose(occupancy_estimate(one_series([1.0, 2.0, 3.0]), p), [1.0])


def test_missing_values_contribute_nothing(rng):
    p = random_model(rng, 2, "gamma")
    y = rng.gamma(2, 1, 10)
    y_missing = y.copy()
    y_missing[4] = np.nan
    F = density_matrix(("gamma",), p.emissions.params, y_missing)
    mats = p.transition.matrices(None, 10)
    assert log_likelihood(one_series(y_missing), p) == pytest.approx(enumerate_loglik(p.delta, mats, F), abs=1e-10)


def test_long_series_does_not_underflow(rng):
    p = gamma_hmm([1, 3, 5.5], [1.5, 4, 12], BASE_GAMMA)
    y = rng.gamma(4, 0.75, 20000)
    assert np.isfinite(log_likelihood(one_series(y), p))


def test_impossible_observation_raises():
    p = ParameterVector(np.array([1.0, 0.0]), Homogeneous(np.eye(2)),
                        EmissionParams(("normal",), ({"mean": [0.0, 1.0], "sd": [1e-3, 1e-3]},)))
    with pytest.raises(UnderflowError):
        log_likelihood(one_series([0.0, 50.0]), p)


# -- Viterbi ---------------------------------------------------------------------------------------


def test_viterbi_single_state_is_constant():
    p = gamma_hmm([1.0], [2.0], [[1.0]])
    assert viterbi(one_series([0.5, 1.0, 2.0]), p)[0].tolist() == [0, 0, 0]


def test_viterbi_matches_enumeration(rng):
    for _ in range(30):
        N = int(rng.integers(2, 4))
        T = int(rng.integers(2, 7))
        p = random_model(rng, N, "normal")
        y = rng.normal(0, 3, T)
        F = density_matrix(("normal",), p.emissions.params, y)
        expect = enumerate_map_path(p.delta, p.transition.matrices(None, T), F)
        np.testing.assert_array_equal(viterbi(one_series(y), p)[0], expect)


def test_viterbi_recovers_well_separated_path(rng):
    g = np.full((3, 3), 0.005) + np.eye(3) * 0.985
    means = np.array([0.0, 8.0, 16.0])
    p = ParameterVector(np.full(3, 1 / 3), Homogeneous(g),
                        EmissionParams(("normal",), ({"mean": means, "sd": np.ones(3)},)))
    s = np.zeros(3000, dtype=int)
    for t in range(1, 3000):
        s[t] = rng.choice(3, p=g[s[t - 1]])
    y = means[s] + rng.normal(size=3000)
    path = viterbi(one_series(y), p)[0]
    assert np.mean(path != s) < 0.01


# -- stationary distribution -----------------------------------------------------------------------


def test_symmetric_tpm_is_uniform():
    np.testing.assert_allclose(stationary_distribution(np.asarray(BASE_GAMMA)), 1 / 3, atol=1e-12)


def test_two_state_hand_solution():
    pi = stationary_distribution(np.array([[0.9, 0.1], [0.5, 0.5]]))
    np.testing.assert_allclose(pi, [5 / 6, 1 / 6], atol=1e-14)
    np.testing.assert_allclose(pi, power_stationary(np.array([[0.9, 0.1], [0.5, 0.5]])), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_stationary_fixed_point_property(n, seed):
    g = random_tpm(np.random.default_rng(seed), n)
    pi = stationary_distribution(g)
    assert np.max(np.abs(pi @ g - pi)) < 1e-12
    assert abs(pi.sum() - 1) < 1e-12


def test_reducible_chain_rejected():
    with pytest.raises(SingularChainError):
        stationary_distribution(np.eye(2))


def test_permutation_invariance_of_likelihood(rng):
    p = random_model(rng, 3, "gamma")
    obs = one_series(rng.gamma(2, 2, 200))
    perm = np.array([2, 0, 1])
    assert log_likelihood(obs, p.permute(perm)) == pytest.approx(log_likelihood(obs, p), abs=1e-9)


def test_roundtrip_dict(rng):
    p = random_model(rng, 3, "normal", 1)
    q = ParameterVector.from_dict(p.to_dict())
    np.testing.assert_array_equal(q.transition.beta, p.transition.beta)
    np.testing.assert_array_equal(q.delta, p.delta)
