"""Generators for the six misspecification scenarios built around a 3-state gamma HMM."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .hmm import ObservationSet, Series, stationary_distribution

BASE_MEANS = (1.0, 3.0, 5.5)
BASE_SHAPES = (1.5, 4.0, 12.0)
BASE_GAMMA = ((0.8, 0.1, 0.1), (0.1, 0.8, 0.1), (0.1, 0.1, 0.8))
MIXTURE_GAMMA = ((0.1, 0.1, 0.8), (0.1, 0.8, 0.1), (0.1, 0.1, 0.8))
DEFAULT_M = {1: 1, 2: 1, 3: 10, 4: 10, 5: 10, 6: 1}
PERIOD = 96


@dataclass
class ScenarioConfig:
    """Generator settings; ``M=None`` picks 1 individual for scenarios 1, 2, 6 and 10 otherwise."""

    scenario: int
    T: int = 5000
    M: int | None = None
    seed: int = 0
    means: tuple = BASE_MEANS
    shapes: tuple = BASE_SHAPES
    gamma: tuple = BASE_GAMMA
    outlier_frac: float = 0.005
    outlier_range: tuple = (10.0, 20.0)
    mixture_gamma: tuple = MIXTURE_GAMMA
    mixture_weights: tuple = (0.5, 0.5)
    lognormal_var: float = 0.15
    ar_persistence: float = 0.85
    ar_sd_frac: float = 0.15
    ar_floor: float = 0.05
    cosinor_amplitude: float = 1.0
    period: int = PERIOD

    def __post_init__(self):
        if self.scenario not in range(1, 7):
            raise ConfigError(f"scenario must be 1-6, got {self.scenario}")
        if self.M is None:
            self.M = DEFAULT_M[self.scenario]
        if self.T < 2:
            raise ConfigError("T must be at least 2")
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if not 0 <= self.outlier_frac <= 1:
            raise ConfigError("outlier fraction must lie in [0, 1]")
        if abs(sum(self.mixture_weights) - 1) > 1e-12 or min(self.mixture_weights) < 0:
            raise ConfigError("mixture weights must form a probability vector")
        if not 0 <= self.ar_persistence < 1:
            raise ConfigError("AR persistence must lie in [0, 1)")
        if self.period < 1:
            raise ConfigError("period must be positive")


@dataclass
class Simulation:
    obs: ObservationSet
    states: list
    truth: dict = field(default_factory=dict)
    config: ScenarioConfig | None = None

    def truth_json(self):
        doc = {"config": _jsonable(asdict(self.config)), "states": [s.tolist() for s in self.states]}
        doc.update(_jsonable(self.truth))
        return json.dumps(doc, sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def time_of_day(T):
    """Covariate supplied to non-stationary fits: 1..96 repeating."""
    return (np.arange(T) % PERIOD) + 1.0


def cosinor_gamma(t, amplitude=1.0, base=BASE_GAMMA, period=PERIOD):
    """Transition matrices at integer times ``t``.

    Off-diagonal logits (relative to the diagonal) are the base logits plus
    ``amplitude * cos(2 pi t / period - phi_j)``, with one phase per
    destination state ``phi_j = 2 pi j / N``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    g = np.asarray(base, dtype=float)
    n = g.shape[0]
    base_logit = np.log(g) - np.log(np.diag(g))[:, None]
    phi = 2 * np.pi * np.arange(n) / n
    wave = amplitude * np.cos(2 * np.pi * t[:, None] / period - phi[None, :])
    logits = base_logit[None] + wave[:, None, :]
    idx = np.arange(n)
    logits[:, idx, idx] = 0.0
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _markov_path(rng, delta, mats, T):
    """Sample a path; ``mats`` is one matrix or a (T-1, N, N) stack."""
    u = rng.random(T)
    s = np.empty(T, dtype=np.int64)
    s[0] = min(np.searchsorted(np.cumsum(delta), u[0], side="right"), len(delta) - 1)
    cum = np.cumsum(mats, axis=-1)
    n = cum.shape[-1]
    if cum.ndim == 2:
        for t in range(1, T):
            s[t] = min(np.searchsorted(cum[s[t - 1]], u[t], side="right"), n - 1)
    else:
        for t in range(1, T):
            s[t] = min(np.searchsorted(cum[t - 1, s[t - 1]], u[t], side="right"), n - 1)
    return s


def simulate(config):
    """Draw data and hidden truth for one scenario; bit-reproducible given the config."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    T, M = cfg.T, cfg.M
    means = np.asarray(cfg.means, dtype=float)
    shapes = np.asarray(cfg.shapes, dtype=float)
    gamma = np.asarray(cfg.gamma, dtype=float)
    tod = time_of_day(T)
    values, states = [], []
    truth = {"individuals": []}
    for m in range(M):
        info = {}
        mu = np.tile(means, (T, 1))
        if cfg.scenario == 3:
            k = int(rng.choice(2, p=cfg.mixture_weights))
            g = gamma if k == 0 else np.asarray(cfg.mixture_gamma, dtype=float)
            info["component"] = k + 1
            s = _markov_path(rng, stationary_distribution(g), g, T)
        elif cfg.scenario == 6:
            mats = cosinor_gamma(np.arange(2, T + 1), cfg.cosinor_amplitude, gamma, cfg.period)
            delta = stationary_distribution(cosinor_gamma(1, cfg.cosinor_amplitude, gamma, cfg.period)[0])
            s = _markov_path(rng, delta, mats, T)
        else:
            s = _markov_path(rng, stationary_distribution(gamma), gamma, T)
        if cfg.scenario == 4:
            mu3 = float(np.exp(rng.normal(np.log(means[2]), np.sqrt(cfg.lognormal_var))))
            mu[:, 2] = mu3
            info["mean_state3"] = mu3
        elif cfg.scenario == 5:
            phi = cfg.ar_persistence
            sd = cfg.ar_sd_frac * means[0]
            eps = rng.normal(0.0, sd * np.sqrt(1 - phi**2), T)
            x = np.empty(T)
            x[0] = rng.normal(0.0, sd)
            for t in range(1, T):
                x[t] = phi * x[t - 1] + eps[t]
            mu[:, 0] = np.maximum(means[0] + x, cfg.ar_floor)
            info["mean_state1_path"] = mu[:, 0].copy()
        m_t = mu[np.arange(T), s]
        k_t = shapes[s]
        y = rng.gamma(k_t, m_t / k_t)
        if cfg.scenario == 2:
            n_out = int(round(cfg.outlier_frac * T))
            idx = np.sort(rng.choice(T, size=n_out, replace=False))
            err = rng.uniform(cfg.outlier_range[0], cfg.outlier_range[1], n_out)
            y[idx] += err
            info["outlier_index"] = idx
            info["outlier_error"] = err
        values.append(y)
        states.append(s)
        truth["individuals"].append(info)
    series = [Series(y, tod, id=str(m + 1)) for m, y in enumerate(values)]
    obs = ObservationSet(series, ("step",), ("tod",), ("positive",))
    truth["means"] = means
    truth["shapes"] = shapes
    truth["gamma"] = gamma
    return Simulation(obs, states, truth, cfg)


# -- generator self-checks -----------------------------------------------------------------------


def _transition_counts(paths, n):
    C = np.zeros((n, n))
    for s in paths:
        np.add.at(C, (s[:-1], s[1:]), 1.0)
    return C


def _row_freq(C):
    rows = C.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, C / rows, np.nan)


def empirical_checks(sim):
    """Per-state emission moments, transition frequencies and occupancy against the generator.

    Empty states or too-short series give NaN entries rather than errors.
    """
    cfg = sim.config
    n = len(cfg.means)
    y = np.concatenate([s.values[:, 0] for s in sim.obs.series])
    s = np.concatenate(sim.states)
    emp_mean = np.full(n, np.nan)
    emp_shape = np.full(n, np.nan)
    for j in range(n):
        yj = y[s == j]
        if yj.size:
            emp_mean[j] = yj.mean()
        if yj.size > 1 and yj.var() > 0:
            emp_shape[j] = yj.mean() ** 2 / yj.var(ddof=1)
    freq = _row_freq(_transition_counts(sim.states, n))
    report = {
        "scenario": cfg.scenario,
        "n_obs": int(y.size),
        "mean": emp_mean,
        "mean_target": np.asarray(cfg.means, dtype=float),
        "shape": emp_shape,
        "shape_target": np.asarray(cfg.shapes, dtype=float),
        "occupancy": np.bincount(s, minlength=n) / s.size,
        "transition_freq": freq,
        "transition_target": np.asarray(cfg.gamma, dtype=float),
    }
    if cfg.scenario == 3:
        comps = {}
        for k in (1, 2):
            paths = [p for p, info in zip(sim.states, sim.truth["individuals"]) if info["component"] == k]
            comps[k] = _row_freq(_transition_counts(paths, n)) if paths else np.full((n, n), np.nan)
        report["component_freq"] = comps
        report["component_target"] = {1: np.asarray(cfg.gamma), 2: np.asarray(cfg.mixture_gamma)}
    if cfg.scenario == 6:
        occ = np.zeros((cfg.period, n))
        for p in sim.states:
            slot = np.arange(len(p)) % cfg.period
            np.add.at(occ, (slot, p), 1.0)
        with np.errstate(invalid="ignore"):
            report["occupancy_by_slot"] = occ / occ.sum(axis=1, keepdims=True)
    return report
