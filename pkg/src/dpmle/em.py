"""E-step, transition M-steps and the unpenalised EM baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import kernels
from .emissions import add_stats, channel_stats, weighted_mle
from .errors import ConvergenceError, NumericError
from .hmm import CovariateLogit, Homogeneous, _softmax_rows, design, forward_backward, stationary_distribution


@dataclass
class EStepStats:
    """Posterior state weights ``u`` and transition weights ``v`` for each series.

    ``v[m][t - 1, j, k]`` is P(S_{t-1}=j, S_t=k | y), normalised by the
    likelihood.  ``v`` is ``None`` when only the totals were requested.
    """

    u: list
    v: list | None
    v_sum: np.ndarray
    u_first: np.ndarray
    loglik: float
    emission_stats: list
    passes: list = field(repr=False, default_factory=list)

    @property
    def occupancy(self):
        n = sum(x.shape[0] for x in self.u)
        return sum(x.sum(axis=0) for x in self.u) / n


def e_step(obs, params, per_time=True, backend=None):
    kern = kernels.get_backend(backend)
    fb = forward_backward(obs, params, backend)
    N = params.n_states
    us, vs = [], [] if per_time else None
    v_sum = np.zeros((N, N))
    em_stats = None
    for s, p in zip(obs.series, fb.passes):
        u = p.posterior
        us.append(u)
        if per_time:
            v = kern.xi_all(p.alpha, p.beta, p.P, p.G, p.logc)
            vs.append(v)
            v_sum += v.sum(axis=0)
        else:
            v_sum += kern.xi_sum(p.alpha, p.beta, p.P, p.G, p.logc)
        em_stats = add_stats(em_stats, channel_stats(params.emissions, s.values, u))
    u_first = sum(u[0] for u in us)
    return EStepStats(us, vs, v_sum, u_first, fb.loglik, em_stats, fb.passes)


# -- stationary transition update ----------------------------------------------------------------


def _offdiag(n):
    return ~np.eye(n, dtype=bool)


def _logits_of(gamma):
    g = np.maximum(np.asarray(gamma, dtype=float), 1e-300)
    return np.log(g) - np.log(np.diag(g))[:, None]


def stationary_transition_objective(theta, coef, V, with_grad=True):
    """Value (and logit gradient) of ``sum_j coef_j log pi_j(G) + sum_ij V_ij log G_ij``."""
    n = V.shape[0]
    mask = _offdiag(n)
    logits = np.zeros((n, n))
    logits[mask] = theta
    G = _softmax_rows(logits)
    A = np.eye(n) - G + 1.0
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        return (-np.inf, np.zeros_like(theta)) if with_grad else -np.inf
    pi = Ainv.sum(axis=0)
    if np.any(pi <= 0):
        return (-np.inf, np.zeros_like(theta)) if with_grad else -np.inf
    logG = np.log(G)
    val = float(coef @ np.log(pi) + np.sum(V * logG))
    if not with_grad:
        return val
    H = V / G + np.outer(pi, Ainv @ (coef / pi))
    dtheta = G * (H - np.sum(H * G, axis=1, keepdims=True))
    return val, dtheta[mask]


def m_step_transition_stationary(stats, c_n, gamma, max_iter=200):
    """Maximise term (I) of the expected complete-data objective over a homogeneous chain.

    Returns the updated matrix and its stationary distribution.
    """
    gamma = np.asarray(gamma, dtype=float)
    n = gamma.shape[0]
    if n == 1:
        return np.ones((1, 1)), np.ones(1)
    coef = stats.u_first + c_n
    V = stats.v_sum
    theta0 = _logits_of(gamma)[_offdiag(n)]
    f0 = stationary_transition_objective(theta0, coef, V, with_grad=False)

    def neg(theta):
        val, g = stationary_transition_objective(theta, coef, V)
        if not np.isfinite(val):
            return 1e300, np.zeros_like(theta)
        return -val, -g

    res = optimize.minimize(neg, theta0, jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-9})
    theta = res.x if -res.fun >= f0 else theta0
    logits = np.zeros((n, n))
    logits[_offdiag(n)] = theta
    G = _softmax_rows(logits)
    pi = stationary_distribution(G)
    if not res.success and res.status == 1:
        raise ConvergenceError("stationary transition update hit its iteration limit", best=(G, pi))
    return G, pi


# -- covariate-driven transition update -----------------------------------------------------------


class _Standardiser:
    """Affine rescaling of covariates so the logit optimiser sees unit-scale inputs."""

    def __init__(self, designs):
        X = np.vstack(designs)
        self.center = X[:, 1:].mean(axis=0) if X.shape[0] else np.zeros(X.shape[1] - 1)
        sd = X[:, 1:].std(axis=0) if X.shape[0] else np.ones(X.shape[1] - 1)
        self.scale = np.where(sd > 0, sd, 1.0)

    def design(self, X):
        Z = X.copy()
        Z[:, 1:] = (X[:, 1:] - self.center) / self.scale
        return Z

    def to_std(self, beta):
        b = beta.copy()
        b[..., 1:] = beta[..., 1:] * self.scale
        b[..., 0] = beta[..., 0] + np.sum(beta[..., 1:] * self.center, axis=-1)
        return b

    def to_raw(self, b):
        beta = b.copy()
        beta[..., 1:] = b[..., 1:] / self.scale
        beta[..., 0] = b[..., 0] - np.sum(beta[..., 1:] * self.center, axis=-1)
        return beta


class TransitionData:
    """Design rows of every transition, collapsed to the distinct rows.

    ``inverse[m][t]`` maps transition ``t`` of series ``m`` to its row in
    ``X``; ``V`` holds the posterior transition weights summed per row.
    """

    def __init__(self, designs, vs=None):
        stacked = np.vstack(designs)
        self.X, inv = np.unique(stacked, axis=0, return_inverse=True)
        inv = np.asarray(inv).ravel()
        bounds = np.cumsum([0] + [d.shape[0] for d in designs])
        self.inverse = [inv[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        self.V = None
        if vs is not None:
            n = vs[0].shape[-1]
            self.V = np.zeros((self.X.shape[0], n, n))
            for idx, v in zip(self.inverse, vs):
                np.add.at(self.V, idx, v)


def nonstationary_transition_objective(b, data, c_n, passes, delta, backend=None, with_grad=True):
    """Objective of the covariate-logit update and its gradient in the coefficients ``b``.

    ``data`` is a :class:`TransitionData` and ``passes`` supply the (frozen)
    scaled emission densities.  The occupancy term's gradient is exact: the
    derivative of an expected additive functional of the path is a
    posterior covariance, computed with one extra sweep (``reward_pairs``).
    """
    kern = kernels.get_backend(backend)
    n = b.shape[0]
    Gu = _softmax_rows(np.einsum("kc,ijc->kij", data.X, b))
    V = data.V
    with np.errstate(divide="ignore"):
        logG = np.log(Gu)
    val = float(np.sum(np.where(V > 0, V * logG, 0.0)))
    grad = None
    if with_grad:
        g1 = V - Gu * V.sum(axis=-1, keepdims=True)
        grad = np.einsum("kil,kc->ilc", g1, data.X)
    if c_n > 0:
        fwd = []
        occ = np.zeros(n)
        n_obs = 0
        for idx, p in zip(data.inverse, passes):
            G = Gu[idx]
            alpha, logc = kern.forward(p.P, G, delta)
            if not np.all(np.isfinite(logc)):
                raise NumericError("occupancy recursion underflowed")
            beta = kern.backward(p.P, G, logc)
            occ += np.einsum("tj,tj->j", alpha, beta)
            n_obs += alpha.shape[0]
            fwd.append((idx, G, p.P, alpha, beta, logc))
        pihat = occ / n_obs
        val += float(c_n * np.sum(np.log(pihat)))
        if with_grad:
            w = c_n / (n_obs * pihat)
            Ru = np.zeros_like(Gu)
            for idx, G, P, alpha, beta, logc in fwd:
                R, EH = kern.reward_pairs(alpha, beta, P, G, logc, w)
                R -= EH * kern.xi_all(alpha, beta, P, G, logc)
                np.add.at(Ru, idx, R)
            g2 = Ru - Gu * Ru.sum(axis=-1, keepdims=True)
            grad += np.einsum("kil,kc->ilc", g2, data.X)
    if not with_grad:
        return val
    return val, grad


def _designs(obs):
    return [design(s.covariates[1:] if s.covariates is not None else np.zeros((len(s) - 1, 0)))
            for s in obs.series]


def m_step_transition_nonstationary(obs, stats, c_n, params, max_iter=10, backend=None):
    """Update the logit coefficients with the occupancy barrier ``c_n * sum log pihat``.

    Emission parameters and the initial distribution stay frozen at their
    current values.  A generalised M-step: at most ``max_iter`` quasi-Newton
    iterations, and the entry coefficients are kept unless the objective
    improves.  Returns a new :class:`CovariateLogit`.
    """
    model = params.transition
    if not isinstance(model, CovariateLogit):
        model = CovariateLogit.from_gamma(model.gamma, obs.n_covariates)
    n, _, c1 = model.beta.shape
    if n == 1:
        return model
    raw = _designs(obs)
    std = _Standardiser(raw)
    data = TransitionData([std.design(X) for X in raw], stats.v)
    mask = np.broadcast_to(_offdiag(n)[:, :, None], (n, n, c1))
    delta = np.ascontiguousarray(params.delta)

    def unpack(theta):
        b = np.zeros((n, n, c1))
        b[mask] = theta
        return b

    def neg(theta):
        val, g = nonstationary_transition_objective(unpack(theta), data, c_n, stats.passes, delta, backend)
        if not np.isfinite(val):
            raise NumericError("non-finite objective in the transition update")
        return -val, -g[mask]

    theta0 = std.to_std(model.beta)[mask]
    f0, _ = neg(theta0)
    res = optimize.minimize(neg, theta0, jac=True, method="L-BFGS-B",
                            options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-8})
    theta = res.x if res.fun <= f0 else theta0
    return CovariateLogit(std.to_raw(unpack(theta)))


def baum_welch_gamma(stats):
    v = stats.v_sum
    rows = v.sum(axis=1, keepdims=True)
    n = v.shape[0]
    return np.where(rows > 0, v / np.where(rows > 0, rows, 1.0), np.eye(n))


# -- unpenalised EM ------------------------------------------------------------------------------


@dataclass
class MLEFit:
    params: object
    loglik: float
    trace: list
    n_iter: int
    converged: bool


def update_transition(obs, stats, params, c_n=0.0, backend=None):
    """Transition part of an M-step; returns (transition model, delta)."""
    M = len(obs.series)
    if isinstance(params.transition, CovariateLogit):
        model = m_step_transition_nonstationary(obs, stats, c_n, params, backend=backend)
        return model, stats.u_first / M
    if params.stationary:
        try:
            G, pi = m_step_transition_stationary(stats, c_n, params.transition.gamma)
        except ConvergenceError as exc:
            G, pi = exc.best
        return Homogeneous(G), pi
    return Homogeneous(baum_welch_gamma(stats)), stats.u_first / M


def fit_mle(obs, init, max_iter=500, tol=1e-6, backend=None):
    """Classical EM from ``init``; keeps its transition type and stationarity."""
    params = init
    trace = []
    converged = False
    per_time = isinstance(init.transition, CovariateLogit)
    for it in range(max_iter):
        stats = e_step(obs, params, per_time=per_time, backend=backend)
        trace.append(stats.loglik)
        if it > 0 and trace[-1] - trace[-2] < tol * abs(trace[-2]):
            converged = True
            break
        model, delta = update_transition(obs, stats, params, 0.0, backend)
        emissions = weighted_mle(params.emissions, stats.emission_stats)
        params = params.replace(transition=model, delta=delta, emissions=emissions)
    return MLEFit(params, trace[-1], trace, len(trace), converged)
