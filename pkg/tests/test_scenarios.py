import json

import numpy as np
import pytest

from dpmle.errors import ConfigError
from dpmle.hmm import stationary_distribution
from dpmle.scenarios import (BASE_GAMMA, BASE_MEANS, MIXTURE_GAMMA, ScenarioConfig, cosinor_gamma, empirical_checks,
                             simulate, time_of_day)


@pytest.mark.parametrize("scenario, M", [(1, 1), (2, 1), (3, 10), (4, 10), (5, 10), (6, 1)])
def test_default_individuals(scenario, M):
    sim = simulate(ScenarioConfig(scenario, T=50, seed=0))
    assert len(sim.obs.series) == M
    assert all(len(s) == 50 for s in sim.obs.series)
    assert all(np.all(s.values > 0) for s in sim.obs.series)


def test_base_scenario_moments_and_occupancy():
    rep = empirical_checks(simulate(ScenarioConfig(1, T=12000, seed=3)))
    np.testing.assert_allclose(rep["mean"], BASE_MEANS, rtol=0.05)
    np.testing.assert_allclose(rep["occupancy"], 1 / 3, atol=0.03)
    np.testing.assert_allclose(rep["transition_freq"], BASE_GAMMA, atol=0.03)
    np.testing.assert_allclose(rep["shape"], rep["shape_target"], rtol=0.15)


def test_outliers_exact_count_and_range():
    cfg = ScenarioConfig(2, T=5000, seed=8)
    sim = simulate(cfg)
    clean = simulate(ScenarioConfig(2, T=5000, seed=8, outlier_frac=0.0))
    info = sim.truth["individuals"][0]
    assert len(info["outlier_index"]) == 25
    diff = sim.obs.series[0].values[:, 0] - clean.obs.series[0].values[:, 0]
    # same seed, so the clean draw is the contaminated one before shifting
    np.testing.assert_allclose(diff[info["outlier_index"]], info["outlier_error"], atol=1e-12)
    assert np.all((info["outlier_error"] >= 10) & (info["outlier_error"] <= 20))
    mask = np.ones(5000, bool)
    mask[info["outlier_index"]] = False
    assert np.all(diff[mask] == 0)


def test_random_effect_components():
    sim = simulate(ScenarioConfig(3, T=5000, M=40, seed=4))
    comps = [i["component"] for i in sim.truth["individuals"]]
    assert set(comps) == {1, 2}
    rep = empirical_checks(sim)
    np.testing.assert_allclose(rep["component_freq"][1], BASE_GAMMA, atol=0.05)
    np.testing.assert_allclose(rep["component_freq"][2], MIXTURE_GAMMA, atol=0.05)


def test_lognormal_state_three_means():
    cfg = ScenarioConfig(4, T=100, M=400, seed=5)
    sim = simulate(cfg)
    mu3 = np.array([i["mean_state3"] for i in sim.truth["individuals"]])
    target = np.exp(np.log(5.5) + cfg.lognormal_var / 2)
    sd = np.sqrt((np.exp(cfg.lognormal_var) - 1) * np.exp(2 * np.log(5.5) + cfg.lognormal_var))
    assert abs(mu3.mean() - target) < 3 * sd / np.sqrt(len(mu3))
    assert np.log(mu3).var(ddof=1) == pytest.approx(cfg.lognormal_var, rel=0.2)


def test_autoregressive_state_one_mean():
    cfg = ScenarioConfig(5, T=4000, M=2, seed=6)
    sim = simulate(cfg)
    path = sim.truth["individuals"][0]["mean_state1_path"]
    assert path.min() >= cfg.ar_floor
    x = path - 1.0
    lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert lag1 == pytest.approx(cfg.ar_persistence, abs=0.05)
    assert x.std() == pytest.approx(cfg.ar_sd_frac, rel=0.2)


def test_cosinor_matrices():
    G = cosinor_gamma(np.arange(1, 97))
    np.testing.assert_allclose(G.sum(axis=-1), 1.0, atol=1e-14)
    np.testing.assert_allclose(cosinor_gamma([5]), cosinor_gamma([5 + 96]), atol=1e-14)
    np.testing.assert_allclose(cosinor_gamma([7], amplitude=0.0)[0], BASE_GAMMA, atol=1e-14)
    assert np.ptp(G[:, 0, 1]) > 0.05


def test_cosinor_occupancy_varies_by_time_of_day():
    sim = simulate(ScenarioConfig(6, T=96 * 400, seed=9))
    occ = empirical_checks(sim)["occupancy_by_slot"]
    assert occ.shape == (96, 3)
    assert np.ptp(occ[:, 0]) > 0.1


def test_time_of_day_covariate():
    tod = time_of_day(200)
    assert tod[0] == 1 and tod[95] == 96 and tod[96] == 1
    sim = simulate(ScenarioConfig(1, T=200, seed=0))
    np.testing.assert_array_equal(sim.obs.series[0].covariates[:, 0], tod)


def test_minimum_length_runs():
    for sc in range(1, 7):
        sim = simulate(ScenarioConfig(sc, T=2, M=1, seed=1))
        assert len(sim.obs.series[0]) == 2
        rep = empirical_checks(sim)
        assert rep["n_obs"] == 2


def test_reproducible_and_seed_sensitive():
    a = simulate(ScenarioConfig(5, T=300, seed=12))
    b = simulate(ScenarioConfig(5, T=300, seed=12))
    c = simulate(ScenarioConfig(5, T=300, seed=13))
    assert a.truth_json() == b.truth_json()
    np.testing.assert_array_equal(a.obs.series[3].values, b.obs.series[3].values)
    assert not np.array_equal(a.obs.series[0].values, c.obs.series[0].values)


def test_truth_json_contents():
    doc = json.loads(simulate(ScenarioConfig(2, T=400, seed=1)).truth_json())
    assert doc["config"]["scenario"] == 2
    assert len(doc["states"][0]) == 400
    assert doc["gamma"] == [list(r) for r in BASE_GAMMA]
    assert len(doc["individuals"][0]["outlier_index"]) == 2


def test_start_from_stationary_law():
    firsts = np.array([simulate(ScenarioConfig(1, T=2, seed=s)).states[0][0] for s in range(600)])
    freq = np.bincount(firsts, minlength=3) / 600
    np.testing.assert_allclose(freq, stationary_distribution(np.asarray(BASE_GAMMA)), atol=0.07)


@pytest.mark.parametrize("kwargs", [{"scenario": 7}, {"scenario": 1, "T": 1}, {"scenario": 1, "M": 0},
                                    {"scenario": 2, "outlier_frac": 1.5},
                                    {"scenario": 3, "mixture_weights": (0.7, 0.7)},
                                    {"scenario": 5, "ar_persistence": 1.0}])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kwargs)
