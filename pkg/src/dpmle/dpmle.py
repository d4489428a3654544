"""Double-penalised EM: LLA mean updates, Group-Sort-Fuse ordering, state counting and merging."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .em import _Standardiser, e_step, update_transition
from .emissions import get_family, update_nuisance
from .errors import DimensionError, FittingError
from .hmm import CovariateLogit, Homogeneous, ParameterVector, _softmax_rows, design, log_likelihood

SMOOTH_EPS = 1e-6


# -- ordering and gaps ---------------------------------------------------------------------------


def gsf_order(vectors):
    """Group-Sort-Fuse ordering of per-state parameter vectors.

    Starts from the vector of smallest norm and repeatedly appends the
    nearest unchosen vector; ties go to the lower index.  One-dimensional
    inputs are simply sorted in ascending order.
    """
    v = np.asarray(vectors, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0]
    if v.shape[1] == 1:
        return np.argsort(v[:, 0], kind="stable")
    order = [int(np.argmin(np.linalg.norm(v, axis=1)))]
    left = [j for j in range(n) if j != order[0]]
    while left:
        d = np.linalg.norm(v[left] - v[order[-1]], axis=1)
        order.append(left.pop(int(np.argmin(d))))
    return np.asarray(order)


def gsf_scale(emissions):
    """Per-channel cross-state sd of the location parameters (1 where degenerate)."""
    loc = emissions.locations()
    sd = loc.std(axis=0)
    return np.where(sd > 0, sd, 1.0)


def _standardise(loc, scale):
    return loc if scale is None else loc / scale


def fusion_gaps(emissions, scale=None, order=None):
    """Ordering and consecutive gaps of the penalised location vectors."""
    z = _standardise(emissions.locations(), scale)
    if order is None:
        order = gsf_order(z)
    diffs = np.diff(z[order], axis=0)
    gaps = np.abs(diffs[:, 0]) if z.shape[1] == 1 else np.linalg.norm(diffs, axis=1)
    return order, gaps


def penalty_value(emissions, penalty, scale=None):
    _, gaps = fusion_gaps(emissions, scale)
    return float(np.sum(penalty.value(gaps))) if gaps.size else 0.0


# -- penalised location update -------------------------------------------------------------------


def _surrogate(emissions, stats, weights, order, scale):
    """Expected location log-likelihood minus the linearised penalty (constant dropped)."""
    total = 0.0
    for f, p, s in zip(emissions.families, emissions.params, stats):
        fam = get_family(f)
        total += float(np.sum(fam.location_value(s, p, p[fam.location])))
    _, gaps = fusion_gaps(emissions, scale, order)
    return total - float(np.dot(weights, gaps))


def _pava(fam, s, p, order, weights):
    """Maximise ``sum_j h_j(m_j) - sum_k w_k (m_{order[k+1]} - m_{order[k]})`` subject to the order."""
    n = len(order)
    w = np.concatenate([[0.0], weights, [0.0]])
    tilt = w[1:] - w[:-1]
    blocks = []  # [indices, tilt, value]
    for k in range(n):
        idx = [int(order[k])]
        cur = [idx, tilt[k], fam.block_location(s, p, idx, tilt[k])]
        while blocks and (blocks[-1][2] > cur[2] or np.isinf(blocks[-1][2]) and np.isinf(cur[2])):
            prev = blocks.pop()
            idx = prev[0] + cur[0]
            t = prev[1] + cur[1]
            cur = [idx, t, fam.block_location(s, p, idx, t)]
        blocks.append(cur)
    out = np.empty(n)
    for idx, _, value in blocks:
        if not np.isfinite(value):
            raise FittingError("penalised location update has no finite maximiser")
        out[idx] = value
    return out


_LOG_TRANSFORM = {"gamma": True, "vonmises": True, "normal": False}


def _vector_update(emissions, stats, weights, order, scale, max_iter=200):
    """L-BFGS on the smoothed fused-norm surrogate for multi-channel locations."""
    loc0 = emissions.locations()
    n, K = loc0.shape
    logt = np.array([_LOG_TRANSFORM[f] for f in emissions.families])
    floor = 1e-8
    t0 = np.where(logt, np.log(np.maximum(loc0, floor)), loc0)
    a, b = order[1:], order[:-1]

    def neg(theta):
        t = theta.reshape(n, K)
        loc = np.where(logt, np.exp(t), t)
        val = 0.0
        grad = np.zeros((n, K))
        for c, (f, p, s) in enumerate(zip(emissions.families, emissions.params, stats)):
            fam = get_family(f)
            val += float(np.sum(fam.location_value(s, p, loc[:, c])))
            grad[:, c] = fam.location_grad(s, p, loc[:, c])
        z = loc / scale
        d = z[a] - z[b]
        r = np.sqrt(np.sum(d * d, axis=1) + SMOOTH_EPS**2)
        val -= float(np.dot(weights, r))
        gz = np.zeros((n, K))
        contrib = (weights / r)[:, None] * d
        np.add.at(gz, a, -contrib)
        np.add.at(gz, b, contrib)
        grad += gz / scale
        grad = np.where(logt, grad * loc, grad)
        return -val, -grad.ravel()

    res = optimize.minimize(neg, t0.ravel(), jac=True, method="L-BFGS-B", options={"maxiter": max_iter})
    t = res.x.reshape(n, K)
    return np.where(logt, np.exp(t), t)


def m_step_emission_penalized(stats, penalty, emissions, order=None, scale=None):
    """LLA-penalised update of the location parameters.

    ``stats`` are the posterior-weighted emission statistics and ``order``
    the GSF ordering at the current iterate.  Nuisance parameters are taken
    as given (update them first).  Falls back to the current locations if
    the new ones do not improve the surrogate.
    """
    if emissions.n_states == 1:
        return weighted_location_mle(emissions, stats)
    if penalty.lam == 0:
        return weighted_location_mle(emissions, stats)
    multi = emissions.n_channels > 1
    if multi and scale is None:
        scale = gsf_scale(emissions)
    order_now, gaps = fusion_gaps(emissions, scale if multi else None)
    if order is None:
        order = order_now
    weights = np.asarray(penalty.derivative(gaps), dtype=float)
    if multi:
        new = emissions.with_locations(_vector_update(emissions, stats, weights, order, scale))
    else:
        fam = get_family(emissions.families[0])
        new = emissions.with_locations(_pava(fam, stats[0], emissions.params[0], order, weights))
    sc = scale if multi else None
    if _surrogate(new, stats, weights, order, sc) < _surrogate(emissions, stats, weights, order, sc):
        return emissions
    return new


def weighted_location_mle(emissions, stats):
    loc = np.column_stack([
        get_family(f).mle_location(s, p) for f, p, s in zip(emissions.families, emissions.params, stats)
    ])
    for c, f in enumerate(emissions.families):
        if _LOG_TRANSFORM[f]:
            loc[:, c] = np.maximum(loc[:, c], 1e-8)
    return emissions.with_locations(loc)


# -- counting and merging ------------------------------------------------------------------------


def count_distinct_states(emissions, merge_tol=1e-3, scale=None):
    """Group states whose consecutive GSF gap is within ``merge_tol`` times the parameter range.

    Returns ``(n_hat, groups)`` with groups listed in GSF order, each a list
    of original state indices.
    """
    multi = emissions.n_channels > 1
    if multi and scale is None:
        scale = gsf_scale(emissions)
    z = _standardise(emissions.locations(), scale if multi else None)
    order, gaps = fusion_gaps(emissions, scale if multi else None)
    if z.shape[0] == 1:
        return 1, [[0]]
    if multi:
        span = max(np.linalg.norm(z[i] - z[j]) for i in range(len(z)) for j in range(i + 1, len(z)))
    else:
        span = float(z.max() - z.min())
    thr = merge_tol * span
    groups = [[int(order[0])]]
    for k, g in enumerate(gaps):
        if g <= thr:
            groups[-1].append(int(order[k + 1]))
        else:
            groups.append([int(order[k + 1])])
    return len(groups), groups


def merge_gamma(gamma, groups):
    """``G[A, B] = (1/|A|) sum_{i in A, j in B} gamma_ij``."""
    gamma = np.asarray(gamma, dtype=float)
    n = len(groups)
    out = np.empty((n, n) + gamma.shape[2:])
    for a, A in enumerate(groups):
        for b, B in enumerate(groups):
            out[a, b] = gamma[np.ix_(A, B)].sum(axis=(0, 1)) / len(A)
    return out


def _merge_emissions(emissions, groups, weights):
    params = []
    for f, p in zip(emissions.families, emissions.params):
        q = {k: np.empty(len(groups)) for k in p}
        for g, A in enumerate(groups):
            w = weights[A]
            w = w / w.sum() if w.sum() > 0 else np.full(len(A), 1.0 / len(A))
            for k, v in p.items():
                if f == "vonmises" and k == "mean":
                    q[k][g] = np.arctan2(np.dot(w, np.sin(v[A])), np.dot(w, np.cos(v[A])))
                else:
                    q[k][g] = np.dot(w, v[A])
        params.append(q)
    return type(emissions)(emissions.families, params)


def _fit_soft_logit(targets, X, beta0):
    """Multinomial-logit coefficients whose rows best match the target matrices (cross-entropy).

    Repeated design rows are collapsed with counts, and the optimiser works
    on standardized covariates as the transition M-step does.
    """
    n, _, c1 = beta0.shape
    X, first, counts = np.unique(X, axis=0, return_index=True, return_counts=True)
    targets = targets[first] * counts[:, None, None]
    std = _Standardiser([X])
    Z = std.design(X)
    mask = np.broadcast_to(~np.eye(n, dtype=bool)[:, :, None], beta0.shape)

    def neg(theta):
        b = np.zeros(beta0.shape)
        b[mask] = theta
        G = _softmax_rows(np.einsum("tc,ijc->tij", Z, b))
        val = np.sum(targets * np.log(G))
        g = targets - G * targets.sum(axis=-1, keepdims=True)
        return -val, -np.einsum("til,tc->ilc", g, Z)[mask]

    res = optimize.minimize(neg, std.to_std(beta0)[mask], jac=True, method="L-BFGS-B",
                            options={"maxiter": 1000, "ftol": 1e-14, "gtol": 1e-9})
    b = np.zeros(beta0.shape)
    b[mask] = res.x
    return std.to_raw(b)


def merge_model(params, groups, weights=None, covariates=None):
    """Collapse fused states into one state per group.

    Transition probabilities are averaged over source states and summed over
    destination states; emission parameters are weighted averages (posterior
    state totals by default, circular mean for von Mises angles).  Groups are
    put in order of their smallest member so that the identity grouping
    returns the model unchanged.
    """
    groups = [sorted(int(i) for i in A) for A in groups]
    if any(len(A) == 0 for A in groups):
        raise DimensionError("empty state group")
    members = sorted(i for A in groups for i in A)
    if members != list(range(params.n_states)):
        raise DimensionError("groups must partition the states")
    groups = sorted(groups, key=min)
    if len(groups) == params.n_states:
        return params
    w = np.ones(params.n_states) if weights is None else np.asarray(weights, dtype=float)
    emissions = _merge_emissions(params.emissions, groups, w)
    delta = np.array([params.delta[A].sum() for A in groups])
    model = params.transition
    if isinstance(model, Homogeneous):
        transition = Homogeneous(merge_gamma(model.gamma, groups))
    else:
        cov = np.zeros((1, model.n_covariates)) if covariates is None else np.asarray(covariates, dtype=float)
        X = design(cov)
        G = _softmax_rows(model.logits(X))
        targets = np.moveaxis(merge_gamma(np.moveaxis(G, 0, -1), groups), -1, 0)
        start = CovariateLogit.from_gamma(targets.mean(axis=0), model.n_covariates).beta
        transition = CovariateLogit(_fit_soft_logit(targets, X, start))
    return ParameterVector(delta, transition, emissions, params.stationary)


# -- the fit -------------------------------------------------------------------------------------


@dataclass
class FitOptions:
    max_iter: int = 500
    tol: float = 1e-6
    backend: str | None = None


@dataclass
class DPMLEFit:
    params: ParameterVector
    trace: list
    n_hat: int
    order: np.ndarray
    groups: list
    merged: ParameterVector
    merged_loglik: float
    loglik: float
    state_weights: np.ndarray
    penalty: object
    n_iter: int
    converged: bool
    scale: np.ndarray | None = field(default=None, repr=False)

    @property
    def objective(self):
        return self.trace[-1]


def penalized_objective(loglik, log_pi, emissions, penalty, scale=None):
    return loglik + penalty.c_n * float(np.sum(log_pi)) - penalty_value(emissions, penalty, scale)


def _objective_from_stats(stats, params, penalty, scale):
    pi = stats.occupancy if params.nonstationary else params.delta
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    return penalized_objective(stats.loglik, log_pi, params.emissions, penalty, scale)


def _stacked_covariates(obs):
    if obs.n_covariates == 0:
        return None
    return np.vstack([s.covariates[1:] for s in obs.series])


def fit_dpmle(obs, n_upper, penalty, init, options=None):
    """Maximise the double-penalised likelihood by EM with LLA mean updates, then count and merge states."""
    opts = options or FitOptions()
    if init.n_states != n_upper:
        raise DimensionError(f"initial model has {init.n_states} states, expected {n_upper}")
    params = init
    nonstat = params.nonstationary
    scale = gsf_scale(init.emissions) if init.emissions.n_channels > 1 else None
    trace = []
    converged = False
    stats = None
    for it in range(opts.max_iter + 1):
        stats = e_step(obs, params, per_time=nonstat, backend=opts.backend)
        trace.append(_objective_from_stats(stats, params, penalty, scale))
        if it > 0 and trace[-1] - trace[-2] < opts.tol * abs(trace[-2]):
            converged = True
            break
        if it == opts.max_iter:
            break
        transition, delta = update_transition(obs, stats, params, penalty.c_n, opts.backend)
        emissions = update_nuisance(params.emissions, stats.emission_stats)
        order, _ = fusion_gaps(params.emissions, scale)
        emissions = m_step_emission_penalized(stats.emission_stats, penalty, emissions, order, scale)
        params = params.replace(transition=transition, delta=delta, emissions=emissions)
    if not converged:
        warnings.warn(f"DPMLE stopped after {opts.max_iter} iterations without converging",
                      RuntimeWarning, stacklevel=2)
    weights = stats.emission_stats[0]["U"]
    n_hat, groups = count_distinct_states(params.emissions, penalty.merge_tol, scale)
    order, _ = fusion_gaps(params.emissions, scale)
    merged = merge_model(params, groups, weights, _stacked_covariates(obs))
    merged_ll = log_likelihood(obs, merged, opts.backend)
    return DPMLEFit(params, trace, n_hat, order, groups, merged, merged_ll, stats.loglik, weights,
                    penalty, len(trace), converged, scale)

