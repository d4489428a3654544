"""State-dependent (emission) distributions.

Each observation channel has one family; a multivariate emission is the
product of its channels given the state.  Every family separates its
parameters into one *location-type* parameter (the one the fusion penalty
acts on) and nuisance parameters that get ordinary weighted-likelihood
updates:

========  ==========  ===================
family    location    nuisance
========  ==========  ===================
gamma     mean        shape (scale = mean / shape)
normal    mean        sd
vonmises  kappa       mean angle
========  ==========  ===================

Missing observations are ``NaN`` and contribute a unit density.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DimensionError, DomainError

_LOG_2PI = np.log(2.0 * np.pi)
SHAPE_BOUNDS = (1e-3, 1e6)
KAPPA_MAX = 700.0
MEAN_FLOOR = 1e-8


def _solve_gamma_shape(r):
    """Solve ``log s - digamma(s) = r`` for s > 0 (vectorised, r > 0)."""
    r = np.maximum(np.asarray(r, dtype=float), 1e-12)
    s = (3.0 - r + np.sqrt((r - 3.0) ** 2 + 24.0 * r)) / (12.0 * r)
    for _ in range(50):
        f = np.log(s) - special.digamma(s) - r
        fp = 1.0 / s - special.polygamma(1, s)
        step = f / fp
        s_new = np.where(s - step > 0, s - step, s / 2.0)
        if np.all(np.abs(s_new - s) <= 1e-12 * s):
            s = s_new
            break
        s = s_new
    return np.clip(s, *SHAPE_BOUNDS)


def _a1(kappa):
    kappa = np.asarray(kappa, dtype=float)
    return special.i1e(kappa) / special.i0e(kappa)


def _a1inv(rbar):
    """Inverse of the Bessel ratio ``I1/I0`` (Best & Fisher start, Newton polish)."""
    r = np.clip(np.asarray(rbar, dtype=float), 0.0, 1.0 - 1e-12)
    k = np.where(
        r < 0.53,
        2 * r + r**3 + 5 * r**5 / 6,
        np.where(r < 0.85, -0.4 + 1.39 * r + 0.43 / (1 - r), 1 / (r**3 - 4 * r**2 + 3 * r)),
    )
    for _ in range(20):
        a = _a1(k)
        da = 1.0 - a / np.maximum(k, 1e-12) - a**2
        k = np.clip(k - (a - r) / np.maximum(da, 1e-12), 0.0, KAPPA_MAX)
    return np.where(r <= 0.0, 0.0, k)


class Family:
    """Interface for one emission family; subclasses are stateless singletons."""

    name: str
    params: tuple
    location: str
    support: str

    def logpdf(self, y, p):
        raise NotImplementedError

    def check(self, p):
        raise NotImplementedError

    def stats(self, y, w):
        """Weighted sufficient statistics; ``w`` has shape (T, N)."""
        raise NotImplementedError

    def location_value(self, s, p, loc):
        """Expected complete-data log-likelihood per state as a function of the location."""
        raise NotImplementedError

    def location_grad(self, s, p, loc):
        raise NotImplementedError

    def mle_location(self, s, p):
        raise NotImplementedError

    def update_nuisance(self, s, p):
        """Maximise over nuisance parameters with the location held fixed."""
        raise NotImplementedError

    def fit(self, s, p):
        """Joint weighted MLE."""
        raise NotImplementedError

    def block_location(self, s, p, idx, tilt):
        """Maximise ``sum_{j in idx} location_value_j(m) + tilt * m`` over one shared m.

        Returns ``inf`` when the tilted objective has no interior maximiser
        (the caller treats that as an ordering violation).
        """
        raise NotImplementedError


def _valid(y):
    ok = ~np.isnan(y)
    return ok, np.where(ok, y, 0.0)


class GammaFamily(Family):
    name = "gamma"
    params = ("mean", "shape")
    location = "mean"
    support = "positive"

    def logpdf(self, y, p):
        ok, yv = _valid(y)
        mu, k = p["mean"], p["shape"]
        out = (
            k * np.log(k / mu)
            + special.xlogy(k - 1.0, yv[:, None])
            - k * yv[:, None] / mu
            - special.gammaln(k)
        )
        return np.where(ok[:, None], out, 0.0)

    def check(self, p):
        if np.any(~(p["mean"] > 0)) or np.any(~(p["shape"] > 0)):
            raise DomainError("gamma mean and shape must be positive")

    def stats(self, y, w):
        ok, yv = _valid(y)
        wv = w * ok[:, None]
        with np.errstate(divide="ignore"):
            logy = np.where(ok & (yv > 0), np.log(np.where(yv > 0, yv, 1.0)), 0.0)
        return {"U": wv.sum(0), "S": wv.T @ yv, "L": wv.T @ logy}

    def location_value(self, s, p, loc):
        k = p["shape"]
        return -k * (s["U"] * np.log(loc) + s["S"] / loc)

    def location_grad(self, s, p, loc):
        k = p["shape"]
        return k * (s["S"] / loc**2 - s["U"] / loc)

    def mle_location(self, s, p):
        U = s["U"]
        return np.where(U > 0, s["S"] / np.where(U > 0, U, 1.0), p["mean"])

    def update_nuisance(self, s, p):
        U, mu = s["U"], p["mean"]
        good = U > 1e-10
        Ug = np.where(good, U, 1.0)
        r = np.log(mu) + s["S"] / (Ug * mu) - 1.0 - s["L"] / Ug
        shape = np.where(good, _solve_gamma_shape(r), p["shape"])
        return {"mean": mu.copy(), "shape": shape}

    def fit(self, s, p):
        mu = np.maximum(self.mle_location(s, p), MEAN_FLOOR)
        return self.update_nuisance(s, {"mean": mu, "shape": p["shape"]})

    def block_location(self, s, p, idx, tilt):
        a = float(np.sum(p["shape"][idx] * s["U"][idx]))
        b = float(np.sum(p["shape"][idx] * s["S"][idx]))
        if a <= 0 or b <= 0:
            return float(np.mean(p["mean"][idx]))
        disc = a * a - 4.0 * b * tilt
        if disc < 0:
            return np.inf
        # smaller root of tilt*m^2 - a*m + b, written to avoid cancellation
        return max(2.0 * b / (a + np.sqrt(disc)), MEAN_FLOOR)


class NormalFamily(Family):
    name = "normal"
    params = ("mean", "sd")
    location = "mean"
    support = "real"

    def logpdf(self, y, p):
        ok, yv = _valid(y)
        mu, sd = p["mean"], p["sd"]
        z = (yv[:, None] - mu) / sd
        out = -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI
        return np.where(ok[:, None], out, 0.0)

    def check(self, p):
        if np.any(~(p["sd"] > 0)) or np.any(~np.isfinite(p["mean"])):
            raise DomainError("normal sd must be positive and mean finite")

    def stats(self, y, w):
        ok, yv = _valid(y)
        wv = w * ok[:, None]
        return {"U": wv.sum(0), "S": wv.T @ yv, "Q": wv.T @ (yv * yv)}

    def location_value(self, s, p, loc):
        v = p["sd"] ** 2
        return -(s["Q"] - 2 * loc * s["S"] + loc**2 * s["U"]) / (2 * v)

    def location_grad(self, s, p, loc):
        return (s["S"] - loc * s["U"]) / p["sd"] ** 2

    def mle_location(self, s, p):
        U = s["U"]
        return np.where(U > 0, s["S"] / np.where(U > 0, U, 1.0), p["mean"])

    def update_nuisance(self, s, p):
        U, mu = s["U"], p["mean"]
        good = U > 1e-10
        Ug = np.where(good, U, 1.0)
        var = (s["Q"] - 2 * mu * s["S"] + mu**2 * U) / Ug
        sd = np.where(good, np.sqrt(np.maximum(var, 1e-12)), p["sd"])
        return {"mean": mu.copy(), "sd": sd}

    def fit(self, s, p):
        return self.update_nuisance(s, {"mean": self.mle_location(s, p), "sd": p["sd"]})

    def block_location(self, s, p, idx, tilt):
        prec = s["U"][idx] / p["sd"][idx] ** 2
        if prec.sum() <= 0:
            return float(np.mean(p["mean"][idx]))
        return float((np.sum(s["S"][idx] / p["sd"][idx] ** 2) + tilt) / prec.sum())


class VonMisesFamily(Family):
    name = "vonmises"
    params = ("mean", "kappa")
    location = "kappa"
    support = "angle"

    def logpdf(self, y, p):
        ok, yv = _valid(y)
        mu, k = p["mean"], p["kappa"]
        out = k * (np.cos(yv[:, None] - mu) - 1.0) - _LOG_2PI - np.log(special.i0e(k))
        return np.where(ok[:, None], out, 0.0)

    def check(self, p):
        if np.any(~(p["kappa"] >= 0)) or np.any(~np.isfinite(p["mean"])):
            raise DomainError("von Mises concentration must be >= 0")

    def stats(self, y, w):
        ok, yv = _valid(y)
        wv = w * ok[:, None]
        return {"U": wv.sum(0), "C": wv.T @ np.cos(yv), "Sn": wv.T @ np.sin(yv)}

    def _resultant(self, s, mu):
        return s["C"] * np.cos(mu) + s["Sn"] * np.sin(mu)

    def location_value(self, s, p, loc):
        return loc * self._resultant(s, p["mean"]) - s["U"] * (np.log(special.i0e(loc)) + loc)

    def location_grad(self, s, p, loc):
        return self._resultant(s, p["mean"]) - s["U"] * _a1(loc)

    def mle_location(self, s, p):
        U = s["U"]
        rbar = self._resultant(s, p["mean"]) / np.where(U > 0, U, 1.0)
        return np.where(U > 0, _a1inv(rbar), p["kappa"])

    def update_nuisance(self, s, p):
        mu = np.where(s["U"] > 0, np.arctan2(s["Sn"], s["C"]), p["mean"])
        return {"mean": wrap_angle(mu), "kappa": p["kappa"].copy()}

    def fit(self, s, p):
        q = self.update_nuisance(s, p)
        q["kappa"] = self.mle_location(s, q)
        return q

    def block_location(self, s, p, idx, tilt):
        R = float(np.sum(self._resultant(s, p["mean"])[idx]))
        U = float(np.sum(s["U"][idx]))
        if U <= 0:
            return float(np.mean(p["kappa"][idx]))
        rbar = (R + tilt) / U
        if rbar >= 1.0:
            return np.inf
        return float(_a1inv(rbar))


FAMILIES = {f.name: f for f in (GammaFamily(), NormalFamily(), VonMisesFamily())}


def get_family(name):
    try:
        return FAMILIES[name]
    except KeyError:
        raise DomainError(f"unknown emission family {name!r}; choose from {sorted(FAMILIES)}") from None


def wrap_angle(x):
    """Map angles to (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    out = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


@dataclass
class EmissionParams:
    """Per-state parameters for every observation channel.

    ``families[c]`` names the family of channel ``c`` and ``params[c]`` maps
    each of its parameter names to a length-N array.
    """

    families: tuple
    params: tuple

    def __post_init__(self):
        self.families = tuple(self.families)
        self.params = tuple({k: np.asarray(v, dtype=float).copy() for k, v in p.items()} for p in self.params)
        if len(self.families) != len(self.params):
            raise DimensionError("one parameter record per channel required")
        sizes = set()
        for name, p in zip(self.families, self.params):
            fam = get_family(name)
            if set(p) != set(fam.params):
                raise DimensionError(f"{name} expects parameters {fam.params}, got {sorted(p)}")
            sizes.update(v.shape for v in p.values())
            fam.check(p)
        if len(sizes) != 1 or len(next(iter(sizes))) != 1:
            raise DimensionError("every parameter must be a vector with one entry per state")

    @property
    def n_states(self):
        return len(next(iter(self.params[0].values())))

    @property
    def n_channels(self):
        return len(self.families)

    @property
    def dim(self):
        """Scalar emission parameters per state."""
        return sum(len(get_family(f).params) for f in self.families)

    def log_density(self, Y):
        """Log emission densities, shape (T, N); ``Y`` has one column per channel."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.shape[1] != self.n_channels:
            raise DimensionError(f"observations have {Y.shape[1]} channels, model has {self.n_channels}")
        out = np.zeros((Y.shape[0], self.n_states))
        for c, (name, p) in enumerate(zip(self.families, self.params)):
            out += get_family(name).logpdf(Y[:, c], p)
        return out

    def locations(self):
        """Location-type parameters as an (N, n_channels) matrix."""
        return np.column_stack([p[get_family(f).location] for f, p in zip(self.families, self.params)])

    def with_locations(self, loc):
        loc = np.asarray(loc, dtype=float).reshape(self.n_states, self.n_channels)
        params = []
        for c, (f, p) in enumerate(zip(self.families, self.params)):
            q = {k: v.copy() for k, v in p.items()}
            q[get_family(f).location] = loc[:, c].copy()
            params.append(q)
        return EmissionParams(self.families, params)

    def permute(self, order):
        order = np.asarray(order)
        return EmissionParams(self.families, [{k: v[order] for k, v in p.items()} for p in self.params])

    def copy(self):
        return EmissionParams(self.families, self.params)

    def to_dict(self):
        return {
            "families": list(self.families),
            "params": [{k: v.tolist() for k, v in p.items()} for p in self.params],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["families"], d["params"])


def channel_stats(emissions, Y, w):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    return [get_family(f).stats(Y[:, c], w) for c, f in enumerate(emissions.families)]


def add_stats(a, b):
    if a is None:
        return b
    return [{k: x[k] + y[k] for k in x} for x, y in zip(a, b)]


def location_objective(emissions, stats):
    """Location-dependent part of sum_j sum_t w_j(t) log f_j(y_t), per state."""
    total = np.zeros(emissions.n_states)
    for f, p, s in zip(emissions.families, emissions.params, stats):
        total += get_family(f).location_value(s, p, p[get_family(f).location])
    return total


def weighted_mle(emissions, stats):
    """Unpenalised M-step for every channel."""
    new = [get_family(f).fit(s, p) for f, p, s in zip(emissions.families, emissions.params, stats)]
    return EmissionParams(emissions.families, new)


def update_nuisance(emissions, stats):
    new = [get_family(f).update_nuisance(s, p) for f, p, s in zip(emissions.families, emissions.params, stats)]
    return EmissionParams(emissions.families, new)
