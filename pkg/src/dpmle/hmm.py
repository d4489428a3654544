"""Hidden Markov model core: data containers, transition models and recursions.

States are indexed from 0.  For a series of length T, ``G[t]`` is the
transition matrix between time ``t`` and ``t + 1``; covariate-driven models
build it from covariate row ``t + 1`` (the time being entered).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .emissions import EmissionParams
from .errors import DimensionError, DomainError, NumericError, SingularChainError, UnderflowError

STOCHASTIC_TOL = 1e-12


# -- observations ---------------------------------------------------------------------------


@dataclass
class Series:
    """One individual's time series; missing values are NaN."""

    values: np.ndarray
    covariates: np.ndarray | None = None
    id: str = "1"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        self.values = v
        if self.covariates is not None:
            c = np.asarray(self.covariates, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if c.shape[0] != v.shape[0]:
                raise DimensionError(f"series {self.id}: covariates have {c.shape[0]} rows, expected {v.shape[0]}")
            if not np.all(np.isfinite(c)):
                raise NumericError(f"series {self.id}: covariates must be finite")
            self.covariates = c
        self.id = str(self.id)

    def __len__(self):
        return self.values.shape[0]


@dataclass
class ObservationSet:
    """Independent series sharing channel layout and covariate names.

    ``kinds`` optionally tags each channel as ``"positive"`` (e.g. step
    length), ``"angle"`` (turning angle) or ``"real"`` and is checked on
    construction.
    """

    series: list
    channels: tuple = ("y",)
    covariate_names: tuple = ()
    kinds: tuple | None = None

    def __post_init__(self):
        self.series = list(self.series)
        self.channels = tuple(self.channels)
        self.covariate_names = tuple(self.covariate_names)
        if not self.series:
            raise DimensionError("observation set is empty")
        for s in self.series:
            if len(s) < 2:
                raise DimensionError(f"series {s.id} has length {len(s)}; need at least 2")
            if s.values.shape[1] != len(self.channels):
                raise DimensionError(f"series {s.id} has {s.values.shape[1]} channels, expected {len(self.channels)}")
            ncov = 0 if s.covariates is None else s.covariates.shape[1]
            if ncov != len(self.covariate_names):
                raise DimensionError(f"series {s.id} has {ncov} covariates, expected {len(self.covariate_names)}")
        if self.kinds is not None:
            self.kinds = tuple(self.kinds)
            for s in self.series:
                for c, kind in enumerate(self.kinds):
                    y = s.values[:, c]
                    y = y[~np.isnan(y)]
                    if kind == "positive" and np.any(y < 0):
                        raise DomainError(f"series {s.id}: channel {self.channels[c]} has negative values")
                    if kind == "angle" and np.any((y <= -np.pi) | (y > np.pi)):
                        raise DomainError(f"series {s.id}: channel {self.channels[c]} outside (-pi, pi]")

    @classmethod
    def from_arrays(cls, arrays, covariates=None, channels=None, covariate_names=None, kinds=None):
        arrays = [np.asarray(a, dtype=float) for a in arrays]
        if covariates is None:
            covariates = [None] * len(arrays)
        series = [Series(a, c, id=str(i + 1)) for i, (a, c) in enumerate(zip(arrays, covariates))]
        d = series[0].values.shape[1]
        if channels is None:
            channels = ("y",) if d == 1 else tuple(f"y{i + 1}" for i in range(d))
        if covariate_names is None:
            c0 = series[0].covariates
            covariate_names = () if c0 is None else tuple(f"x{i + 1}" for i in range(c0.shape[1]))
        return cls(series, channels, covariate_names, kinds)

    @property
    def n_obs(self):
        return sum(len(s) for s in self.series)

    @property
    def n_covariates(self):
        return len(self.covariate_names)

    def __len__(self):
        return len(self.series)


# -- transition models -------------------------------------------------------------------------


@dataclass
class Homogeneous:
    """Time-constant transition probability matrix."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise DimensionError("transition matrix must be square")
        if np.any(g < 0) or np.any(g > 1) or np.any(np.abs(g.sum(1) - 1) > 1e-9):
            raise DomainError("transition matrix must be row-stochastic")
        self.gamma = g / g.sum(1, keepdims=True)

    @property
    def n_states(self):
        return self.gamma.shape[0]

    def matrices(self, covariates, T):
        """Transition matrices for steps 0..T-2, shape (T-1, N, N) (broadcast view)."""
        return np.broadcast_to(self.gamma, (max(T - 1, 0),) + self.gamma.shape)

    def permute(self, order):
        order = np.asarray(order)
        return Homogeneous(self.gamma[np.ix_(order, order)])

    def to_dict(self):
        return {"type": "homogeneous", "gamma": self.gamma.tolist()}


@dataclass
class CovariateLogit:
    """Multinomial-logit transitions ``c_ij = beta[i, j] . (1, x)``; diagonal logits fixed at 0."""

    beta: np.ndarray

    def __post_init__(self):
        b = np.array(self.beta, dtype=float)
        if b.ndim != 3 or b.shape[0] != b.shape[1]:
            raise DimensionError("beta must have shape (N, N, C + 1)")
        if not np.all(np.isfinite(b)):
            raise NumericError("non-finite transition coefficient")
        idx = np.arange(b.shape[0])
        b[idx, idx, :] = 0.0
        self.beta = b

    @property
    def n_states(self):
        return self.beta.shape[0]

    @property
    def n_covariates(self):
        return self.beta.shape[2] - 1

    def logits(self, X):
        """Logits for design rows ``X`` of shape (K, C + 1) -> (K, N, N)."""
        return np.einsum("kc,ijc->kij", X, self.beta)

    def matrices(self, covariates, T):
        if covariates is None:
            if self.n_covariates:
                raise DimensionError("covariate-driven transitions need covariates")
            covariates = np.zeros((T, 0))
        covariates = np.asarray(covariates, dtype=float)
        if covariates.shape[1] != self.n_covariates:
            raise DimensionError(f"expected {self.n_covariates} covariates, got {covariates.shape[1]}")
        X = design(covariates[1:T])
        return _softmax_rows(self.logits(X))

    def permute(self, order):
        order = np.asarray(order)
        return CovariateLogit(self.beta[np.ix_(order, order)])

    def to_dict(self):
        return {"type": "covariate_logit", "beta": self.beta.tolist()}

    @classmethod
    def from_gamma(cls, gamma, n_covariates=0):
        """Coefficients reproducing ``gamma`` when all slopes are zero."""
        g = np.maximum(np.asarray(gamma, dtype=float), 1e-300)
        beta = np.zeros(g.shape + (n_covariates + 1,))
        beta[:, :, 0] = np.log(g) - np.log(np.diag(g))[:, None]
        return cls(beta)


def design(covariates):
    covariates = np.asarray(covariates, dtype=float)
    return np.column_stack([np.ones(covariates.shape[0]), covariates])


def _softmax_rows(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def transition_from_dict(d):
    if d["type"] == "homogeneous":
        return Homogeneous(np.asarray(d["gamma"]))
    if d["type"] == "covariate_logit":
        return CovariateLogit(np.asarray(d["beta"]))
    raise DomainError(f"unknown transition model type {d['type']!r}")


def transition_matrix_at(model, covariates_row=None):
    """Transition matrix for one covariate row (ignored by homogeneous models)."""
    if isinstance(model, Homogeneous):
        return model.gamma.copy()
    x = np.zeros(0) if covariates_row is None else np.atleast_1d(np.asarray(covariates_row, dtype=float))
    if x.shape != (model.n_covariates,):
        raise DimensionError(f"expected a covariate row of length {model.n_covariates}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite covariate value")
    return _softmax_rows(model.logits(design(x[None, :])))[0]


# -- parameters ----------------------------------------------------------------------------------


@dataclass
class ParameterVector:
    """Initial distribution, transition model and emission parameters.

    With ``stationary=True`` the initial distribution is the stationary
    distribution of the (homogeneous) transition matrix and ``delta`` is
    recomputed from it.
    """

    delta: np.ndarray | None
    transition: Homogeneous | CovariateLogit
    emissions: EmissionParams
    stationary: bool = False

    def __post_init__(self):
        n = self.transition.n_states
        if self.emissions.n_states != n:
            raise DimensionError(f"{self.emissions.n_states} emission records for {n} states")
        if self.stationary:
            if not isinstance(self.transition, Homogeneous):
                raise DomainError("a stationary model needs a homogeneous transition matrix")
            self.delta = stationary_distribution(self.transition.gamma)
        d = np.asarray(self.delta, dtype=float)
        if d.shape != (n,):
            raise DimensionError(f"delta must have length {n}")
        if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
            raise DomainError("delta must be a probability vector")
        self.delta = d / d.sum()

    @property
    def n_states(self):
        return self.transition.n_states

    @property
    def nonstationary(self):
        return isinstance(self.transition, CovariateLogit)

    def permute(self, order):
        order = np.asarray(order)
        return ParameterVector(
            self.delta[order], self.transition.permute(order), self.emissions.permute(order), self.stationary
        )

    def replace(self, **kw):
        d = {"delta": self.delta, "transition": self.transition, "emissions": self.emissions,
             "stationary": self.stationary}
        d.update(kw)
        return ParameterVector(**d)

    def to_dict(self):
        return {
            "delta": self.delta.tolist(),
            "transition": self.transition.to_dict(),
            "emissions": self.emissions.to_dict(),
            "stationary": self.stationary,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["delta"]), transition_from_dict(d["transition"]),
                   EmissionParams.from_dict(d["emissions"]), d.get("stationary", False))


def gamma_hmm(means, shapes, gamma, stationary=True, delta=None):
    """Convenience constructor for a univariate gamma HMM."""
    em = EmissionParams(("gamma",), ({"mean": means, "shape": shapes},))
    n = len(means)
    if delta is None and not stationary:
        delta = np.full(n, 1.0 / n)
    return ParameterVector(delta, Homogeneous(np.asarray(gamma, dtype=float)), em, stationary=stationary)


# -- recursions -------------------------------------------------------------------------------------


@dataclass
class SeriesPass:
    """Scaled forward-backward quantities for one series.

    ``alpha`` rows sum to one; ``alpha * beta`` is the posterior.  The log
    of the unscaled forward variable at t is ``log(alpha[t]) + cumsum(logc + shift)[t]``.
    """

    P: np.ndarray
    shift: np.ndarray
    G: np.ndarray
    alpha: np.ndarray
    logc: np.ndarray
    beta: np.ndarray | None = None

    @property
    def loglik(self):
        return float(self.logc.sum() + self.shift.sum())

    @property
    def posterior(self):
        p = self.alpha * self.beta
        return p / p.sum(axis=1, keepdims=True)

    @property
    def log_alpha(self):
        cum = np.cumsum(self.logc + self.shift)
        with np.errstate(divide="ignore"):
            return np.log(self.alpha) + cum[:, None]

    @property
    def log_beta(self):
        tail = np.cumsum((self.logc + self.shift)[::-1])[::-1]
        tail = np.append(tail[1:], 0.0)
        with np.errstate(divide="ignore"):
            return np.log(self.beta) + tail[:, None]


@dataclass
class FBResult:
    passes: list = field(default_factory=list)

    @property
    def loglik(self):
        return float(sum(p.loglik for p in self.passes))

    @property
    def series_loglik(self):
        return [p.loglik for p in self.passes]

    @property
    def log_alpha(self):
        return [p.log_alpha for p in self.passes]

    @property
    def log_beta(self):
        return [p.log_beta for p in self.passes]

    @property
    def posterior(self):
        return [p.posterior for p in self.passes]


def _check_compatible(obs, params):
    if params.emissions.n_channels != len(obs.channels):
        raise DimensionError(f"model has {params.emissions.n_channels} channels, data has {len(obs.channels)}")
    if isinstance(params.transition, CovariateLogit) and params.transition.n_covariates != obs.n_covariates:
        raise DimensionError(
            f"model uses {params.transition.n_covariates} covariates, data has {obs.n_covariates}"
        )


def scaled_emissions(emissions, Y):
    """Emission densities divided by their row maximum, plus the log of that maximum."""
    logf = emissions.log_density(Y)
    with np.errstate(invalid="ignore"):
        shift = np.max(logf, axis=1)
    finite = np.isfinite(shift)
    safe = np.where(finite, shift, 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        P = np.exp(logf - safe[:, None])
    P[~finite] = 0.0
    P = np.nan_to_num(P, nan=0.0, posinf=0.0)
    return np.ascontiguousarray(P), safe


def series_pass(s, params, backward=True, backend=None):
    kern = kernels.get_backend(backend)
    T = len(s)
    P, shift = scaled_emissions(params.emissions, s.values)
    G = params.transition.matrices(s.covariates, T)
    alpha, logc = kern.forward(P, G, np.ascontiguousarray(params.delta))
    bad = np.flatnonzero(~np.isfinite(logc))
    if bad.size:
        raise UnderflowError(s.id, int(bad[0]))
    out = SeriesPass(P, shift, G, alpha, logc)
    if backward:
        out.beta = kern.backward(P, G, logc)
    return out


def forward_backward(obs, params, backend=None):
    """Forward and backward passes for every series."""
    _check_compatible(obs, params)
    return FBResult([series_pass(s, params, True, backend) for s in obs.series])


def log_likelihood(obs, params, backend=None):
    """Total log-likelihood (forward pass only)."""
    _check_compatible(obs, params)
    return float(sum(series_pass(s, params, False, backend).loglik for s in obs.series))


def viterbi(obs, params, backend=None):
    """Most likely state path for each series (ties go to the lower state index)."""
    _check_compatible(obs, params)
    kern = kernels.get_backend(backend)
    paths = []
    with np.errstate(divide="ignore"):
        logdelta = np.log(params.delta)
        for s in obs.series:
            logf = params.emissions.log_density(s.values)
            dead = np.flatnonzero(np.all(np.isneginf(logf), axis=1))
            if dead.size:
                raise UnderflowError(s.id, int(dead[0]))
            logG = np.log(params.transition.matrices(s.covariates, len(s)))
            path, _ = kern.viterbi(np.ascontiguousarray(logf), logG, logdelta)
            paths.append(np.asarray(path))
    return paths


def stationary_distribution(gamma):
    """Solve ``pi (I - Gamma + U) = 1`` with U the matrix of ones."""
    gamma = np.asarray(gamma, dtype=float)
    n = gamma.shape[0]
    A = np.eye(n) - gamma + np.ones((n, n))
    if np.linalg.cond(A) > 1e13:
        raise SingularChainError("I - Gamma + U is singular; the chain has no unique stationary law")
    pi = np.linalg.solve(A.T, np.ones(n))
    # one step of iterative refinement keeps ||pi Gamma - pi|| near machine precision
    pi = pi + np.linalg.solve(A.T, np.ones(n) - A.T @ pi)
    if np.any(pi <= 0):
        raise SingularChainError("stationary distribution has non-positive entries")
    return pi / pi.sum()


def occupancy_estimate(obs, params, fb=None):
    """Average posterior state probability over all time points of all series."""
    if fb is None:
        fb = forward_backward(obs, params)
    total = sum(p.posterior.sum(axis=0) for p in fb.passes)
    return total / obs.n_obs
