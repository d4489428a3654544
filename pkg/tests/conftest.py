import sys

import numpy as np
import pytest

from dpmle.emissions import EmissionParams
from dpmle.hmm import CovariateLogit, Homogeneous, ObservationSet, ParameterVector


def random_tpm(rng, n):
    g = rng.dirichlet(np.ones(n), size=n) + 0.05
    return g / g.sum(axis=1, keepdims=True)


def random_emissions(rng, n, family):
    if family == "gamma":
        return EmissionParams(("gamma",), ({"mean": rng.uniform(0.5, 6, n), "shape": rng.uniform(0.8, 8, n)},))
    if family == "normal":
        return EmissionParams(("normal",), ({"mean": rng.normal(0, 3, n), "sd": rng.uniform(0.5, 2, n)},))
    raise ValueError(family)


def draw_values(rng, family, T):
    if family == "gamma":
        return rng.gamma(2.0, 1.5, T)
    return rng.normal(0, 3, T)


def random_model(rng, n, family="gamma", n_cov=0):
    em = random_emissions(rng, n, family)
    if n_cov:
        beta = rng.normal(0, 1, (n, n, n_cov + 1))
        return ParameterVector(rng.dirichlet(np.ones(n)), CovariateLogit(beta), em)
    return ParameterVector(rng.dirichlet(np.ones(n)), Homogeneous(random_tpm(rng, n)), em)


def one_series(y, cov=None, **kw):
    return ObservationSet.from_arrays([np.asarray(y, dtype=float)], None if cov is None else [cov], **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
