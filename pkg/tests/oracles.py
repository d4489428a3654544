"""Reference computations written independently of the package internals.

Densities come from scipy.stats and recursions are done either by brute
force over all state paths or by an unscaled textbook smoother, so they
share no code with the library.
"""
import itertools

import numpy as np
from scipy import stats
from scipy.special import logsumexp


def density_matrix(families, params, Y):
    """f_j(y_t) as a (T, N) array; NaN observations contribute a factor 1."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    T = Y.shape[0]
    N = len(next(iter(params[0].values())))
    out = np.ones((T, N))
    for c, (fam, p) in enumerate(zip(families, params)):
        for j in range(N):
            y = Y[:, c]
            ok = ~np.isnan(y)
            if fam == "gamma":
                d = stats.gamma.pdf(y[ok], a=p["shape"][j], scale=p["mean"][j] / p["shape"][j])
            elif fam == "normal":
                d = stats.norm.pdf(y[ok], loc=p["mean"][j], scale=p["sd"][j])
            elif fam == "vonmises":
                d = stats.vonmises.pdf(y[ok], kappa=p["kappa"][j], loc=p["mean"][j])
            else:
                raise ValueError(fam)
            col = np.ones(T)
            col[ok] = d
            out[:, j] *= col
    return out


def enumerate_loglik(delta, mats, F):
    """log sum over every state path of delta * prod gamma * prod f (N**T terms)."""
    T, N = F.shape
    terms = []
    for path in itertools.product(range(N), repeat=T):
        lp = np.log(delta[path[0]]) + np.log(F[0, path[0]])
        for t in range(1, T):
            lp += np.log(mats[t - 1][path[t - 1], path[t]]) + np.log(F[t, path[t]])
        terms.append(lp)
    return float(logsumexp(terms))


def enumerate_map_path(delta, mats, F):
    T, N = F.shape
    best, arg = -np.inf, None
    for path in itertools.product(range(N), repeat=T):
        lp = np.log(delta[path[0]]) + np.log(F[0, path[0]])
        for t in range(1, T):
            lp += np.log(mats[t - 1][path[t - 1], path[t]]) + np.log(F[t, path[t]])
        if lp > best + 1e-12:
            best, arg = lp, path
    return np.array(arg)


def naive_posterior(delta, mats, F):
    """Unscaled alpha/beta smoother; fine for short, well-conditioned series."""
    T, N = F.shape
    a = np.zeros((T, N))
    b = np.ones((T, N))
    a[0] = delta * F[0]
    for t in range(1, T):
        a[t] = (a[t - 1] @ mats[t - 1]) * F[t]
    for t in range(T - 2, -1, -1):
        b[t] = mats[t] @ (F[t + 1] * b[t + 1])
    L = a[-1].sum()
    return a * b / L, L


def power_stationary(gamma, iters=200000):
    p = np.full(gamma.shape[0], 1.0 / gamma.shape[0])
    for _ in range(iters):
        q = p @ gamma
        if np.max(np.abs(q - p)) < 1e-15:
            return q
        p = q
    return p
