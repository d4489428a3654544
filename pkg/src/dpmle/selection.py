"""Information criteria, baseline AIC/BIC order selection and the NIC hyperparameter search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dpmle import FitOptions, fit_dpmle
from .em import fit_mle
from .emissions import EmissionParams, get_family
from .errors import DPMLEError, FittingError, SearchError
from .hmm import CovariateLogit, Homogeneous, ParameterVector
from .penalty import PenaltyConfig

log = logging.getLogger(__name__)

DEFAULT_BOUNDS = ((1.0, 5.0), (1.0, 5.0))


def num_params(n_hat, emission_dim, covariate_count=0, nonstationary=False):
    """Free parameters of an ``n_hat``-state model.

    Stationary models count emissions plus off-diagonal transition
    probabilities; covariate-driven ones count ``C + 1`` coefficients per
    off-diagonal cell and a free initial distribution.
    """
    if n_hat < 1:
        raise ValueError("order must be at least 1")
    k = emission_dim * n_hat
    if nonstationary:
        return k + n_hat * (n_hat - 1) * (covariate_count + 1) + (n_hat - 1)
    return k + n_hat * (n_hat - 1)


def aic(loglik, k):
    return -2.0 * loglik + 2.0 * k


def bic(loglik, k, n):
    return -2.0 * loglik + k * np.log(n)


def nic(loglik, k, n):
    """BIC-form score of a merged DPMLE fit (``k`` counted at the merged order)."""
    return -2.0 * loglik + k * np.log(n)


@dataclass
class CriterionReport:
    """Candidates scored by one criterion; ``selected`` indexes the minimiser."""

    method: str
    candidates: list
    selected: int

    @property
    def best(self):
        return self.candidates[self.selected]

    @property
    def order(self):
        return self.best["order"]

    def to_dict(self):
        return {"method": self.method, "selected": self.selected, "candidates": self.candidates}


def _select(candidates, key="value", tiebreak=("k", "lam")):
    def rank(i):
        c = candidates[i]
        return (c[key],) + tuple(c.get(t, 0.0) or 0.0 for t in tiebreak)

    return min(range(len(candidates)), key=rank)


# -- initial values ------------------------------------------------------------------------------


def _channel_init(family, y, n, rng):
    y = y[~np.isnan(y)]
    levels = np.sort((np.arange(n) + rng.random(n)) / n)
    if family == "gamma":
        y = y[y > 0]
        return {"mean": np.maximum(np.quantile(y, levels), 1e-3),
                "shape": np.exp(rng.uniform(np.log(0.5), np.log(20.0), n))}
    if family == "normal":
        sd = max(float(np.std(y)), 1e-3)
        return {"mean": np.quantile(y, levels),
                "sd": sd / n * np.exp(rng.uniform(np.log(0.5), np.log(2.0), n))}
    if family == "vonmises":
        return {"mean": rng.uniform(-np.pi, np.pi, n),
                "kappa": np.exp(rng.uniform(np.log(0.5), np.log(20.0), n))}
    get_family(family)
    raise FittingError(f"no initialiser for family {family!r}")


def random_init(obs, n, families=("gamma",), rng=None, stationary=True):
    """Random starting values: location parameters at stratified random data quantiles,
    shapes and concentrations log-uniform on [0.5, 20], diagonal of the tpm uniform on [0.6, 0.95].
    """
    rng = np.random.default_rng(rng)
    Y = np.vstack([s.values for s in obs.series])
    params = [_channel_init(f, Y[:, c], n, rng) for c, f in enumerate(families)]
    if n == 1:
        gamma = np.ones((1, 1))
    else:
        diag = rng.uniform(0.6, 0.95, n)
        off = rng.dirichlet(np.ones(n - 1), size=n)
        gamma = np.zeros((n, n))
        for i in range(n):
            gamma[i, np.arange(n) != i] = (1 - diag[i]) * off[i]
            gamma[i, i] = diag[i]
    delta = None if stationary else np.full(n, 1.0 / n)
    return ParameterVector(delta, Homogeneous(gamma), EmissionParams(tuple(families), params), stationary)


def to_nonstationary(params, n_covariates):
    """Covariate-logit model with zero slopes reproducing a homogeneous fit."""
    return ParameterVector(params.delta.copy(), CovariateLogit.from_gamma(params.transition.gamma, n_covariates),
                           params.emissions, stationary=False)


# -- baselines -----------------------------------------------------------------------------------


@dataclass
class OrderSelection:
    reports: dict
    fits: dict

    def __getitem__(self, key):
        return self.reports[key]


def best_mle(obs, n, families=("gamma",), restarts=10, rng=None, max_iter=500, tol=1e-6, backend=None,
             nonstationary=False):
    """Best of ``restarts`` randomly initialised EM fits of order ``n``."""
    rng = np.random.default_rng(rng)
    best, errors = None, []
    for r in range(restarts):
        init = random_init(obs, n, families, rng, stationary=not nonstationary)
        if nonstationary:
            init = to_nonstationary(init, obs.n_covariates)
        try:
            fit = fit_mle(obs, init, max_iter=max_iter, tol=tol, backend=backend)
        except (DPMLEError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            errors.append(f"restart {r}: {exc}")
            continue
        if np.isfinite(fit.loglik) and (best is None or fit.loglik > best.loglik):
            best = fit
    if best is None:
        raise FittingError(f"all {restarts} restarts failed for order {n}: " + "; ".join(errors[:3]))
    return best


def ic_order_select(obs, orders, families=("gamma",), restarts=150, seed=0, nonstationary=False,
                    max_iter=500, tol=1e-6, backend=None):
    """Fit each order by multi-start EM and score with AIC and BIC."""
    orders = list(orders)
    if not orders:
        raise ValueError("need at least one candidate order")
    rng = np.random.default_rng(seed)
    n = obs.n_obs
    fits, cands = {}, []
    for N in orders:
        fit = best_mle(obs, N, families, restarts, rng, max_iter, tol, backend, nonstationary)
        fits[N] = fit
        k = num_params(N, fit.params.emissions.dim, obs.n_covariates, nonstationary)
        cands.append({"order": N, "loglik": fit.loglik, "k": k})
    reports = {}
    for name, crit in (("AIC", lambda c: aic(c["loglik"], c["k"])), ("BIC", lambda c: bic(c["loglik"], c["k"], n))):
        cs = [dict(c, value=float(crit(c))) for c in cands]
        reports[name] = CriterionReport(name, cs, _select(cs))
    return OrderSelection(reports, fits)


# -- NIC search ----------------------------------------------------------------------------------


def default_m(obs):
    """Multiplier of the SCAD derivative: square root of the total number of observations."""
    return float(np.sqrt(obs.n_obs))


@dataclass
class NICSearch:
    penalty: PenaltyConfig
    fit: object
    report: CriterionReport
    fits: list = field(repr=False, default_factory=list)

    @property
    def n_hat(self):
        return self.fit.n_hat

    @property
    def nic(self):
        return self.report.best["value"]


def draw_penalties(D, bounds=DEFAULT_BOUNDS, m=1.0, rng=None, a=3.7, merge_tol=1e-3):
    """``log(m * lam) ~ U(bounds[0])`` and ``C_N ~ U(bounds[1])``."""
    rng = np.random.default_rng(rng)
    (l0, l1), (c0, c1) = bounds
    if not (l0 <= l1 and 0 < c0 <= c1):
        raise ValueError(f"invalid search bounds {bounds}")
    out = []
    for _ in range(D):
        u = rng.uniform(l0, l1)
        c = rng.uniform(c0, c1)
        out.append(PenaltyConfig(lam=float(np.exp(u) / m), c_n=float(c), a=a, merge_tol=merge_tol, m=m))
    return out


def nic_search(obs, n_upper, inits, draws=50, bounds=DEFAULT_BOUNDS, seed=0, m=None, options=None,
               a=3.7, merge_tol=1e-3):
    """Random search over (lambda, C_N); each draw is fitted from every init and scored by NIC.

    ``inits`` is one parameter vector or a list of them (all of order
    ``n_upper``).  Among inits the fit with the highest penalised objective
    is kept for a draw.  Ties in NIC go to the smaller model, then the
    smaller lambda.
    """
    if draws < 1:
        raise ValueError("need at least one draw")
    if isinstance(inits, ParameterVector):
        inits = [inits]
    m = default_m(obs) if m is None else m
    penalties = draw_penalties(draws, bounds, m, seed, a, merge_tol)
    n = obs.n_obs
    fits, cands, errors = [], [], []
    for d, pen in enumerate(penalties):
        best = None
        for init in inits:
            try:
                fit = fit_dpmle(obs, n_upper, pen, init, options or FitOptions())
            except (DPMLEError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                errors.append(f"draw {d}: {exc}")
                continue
            if best is None or fit.objective > best.objective:
                best = fit
        if best is None:
            continue
        merged = best.merged
        k = num_params(best.n_hat, merged.emissions.dim, obs.n_covariates, merged.nonstationary)
        cands.append({"order": best.n_hat, "lam": pen.lam, "c_n": pen.c_n, "loglik": best.merged_loglik,
                      "k": k, "value": float(nic(best.merged_loglik, k, n)), "converged": best.converged})
        fits.append((pen, best))
        log.debug("draw %d: lam=%.4g c_n=%.3g n_hat=%d nic=%.2f", d, pen.lam, pen.c_n, best.n_hat,
                  cands[-1]["value"])
    if not fits:
        raise SearchError("every DPMLE fit failed: " + "; ".join(errors[:5]))
    if not any(c["converged"] for c in cands):
        raise SearchError(f"none of the {len(cands)} DPMLE fits converged; "
                          f"best NIC {min(c['value'] for c in cands):.3f}")
    method = "DPMLE-nonstationary" if fits[0][1].params.nonstationary else "DPMLE-stationary"
    report = CriterionReport(method, cands, _select(cands))
    pen, fit = fits[report.selected]
    return NICSearch(pen, fit, report, fits)
