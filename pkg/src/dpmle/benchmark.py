"""Replicated order-selection experiments over the simulation scenarios."""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dpmle import FitOptions
from .errors import DPMLEError
from .scenarios import ScenarioConfig, simulate
from .selection import best_mle, ic_order_select, nic_search, to_nonstationary

METHODS = ("aic", "bic", "aic-cov", "bic-cov", "dpmle", "dpmle-cov")
TRUE_ORDER = 3


@dataclass
class BenchmarkConfig:
    scenarios: tuple = (1,)
    sizes: tuple = (5000,)
    replicates: int = 20
    methods: tuple = ("aic", "bic", "dpmle")
    orders: tuple = (2, 3, 4)
    n_upper: int = 4
    draws: int = 20
    restarts: int = 10
    dpmle_restarts: int = 4
    seed: int = 0
    jobs: int = 1
    max_iter: int = 500

    def __post_init__(self):
        self.scenarios = tuple(int(s) for s in self.scenarios)
        self.sizes = tuple(int(t) for t in self.sizes)
        self.methods = tuple(self.methods)
        self.orders = tuple(int(o) for o in self.orders)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


def replicate_seeds(seed, scenario, T, r):
    """Independent data and fitting seeds for one replicate."""
    a, b = np.random.SeedSequence([seed, scenario, T, r]).generate_state(2)
    return int(a), int(b)


def run_replicate(cfg, scenario, T, r):
    """Selected order per method for one simulated dataset (``None`` on failure)."""
    data_seed, fit_seed = replicate_seeds(cfg.seed, scenario, T, r)
    sim = simulate(ScenarioConfig(scenario, T=T, seed=data_seed))
    obs = sim.obs
    opts = FitOptions(max_iter=cfg.max_iter)
    orders = sorted(set(cfg.orders) | {cfg.n_upper})
    out = {"scenario": scenario, "T": T, "replicate": r, "orders": {}, "errors": {}, "seconds": {}}

    def record(names, fn):
        t0 = time.perf_counter()
        try:
            res = fn()
        except (DPMLEError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            for m in names:
                out["orders"][m] = None
                out["errors"][m] = f"{type(exc).__name__}: {exc}"
            res = None
        dt = time.perf_counter() - t0
        for m in names:
            out["seconds"][m] = dt / len(names)
        return res

    want = set(cfg.methods)
    sel = None
    if want & {"aic", "bic", "dpmle", "dpmle-cov"}:
        sel = record([m for m in ("aic", "bic") if m in want] or ["_mle"],
                     lambda: ic_order_select(obs, orders, restarts=cfg.restarts, seed=fit_seed,
                                             max_iter=cfg.max_iter))
        if sel is not None:
            for m in ("aic", "bic"):
                if m in want:
                    out["orders"][m] = int(sel[m.upper()].order)
    if want & {"aic-cov", "bic-cov"}:
        selc = record([m for m in ("aic-cov", "bic-cov") if m in want],
                      lambda: ic_order_select(obs, orders, restarts=cfg.restarts, seed=fit_seed + 1,
                                              nonstationary=True, max_iter=cfg.max_iter))
        if selc is not None:
            for m in ("aic-cov", "bic-cov"):
                if m in want:
                    out["orders"][m] = int(selc[m.split("-")[0].upper()].order)
    if sel is not None and want & {"dpmle", "dpmle-cov"}:
        inits = [sel.fits[cfg.n_upper].params]
        rng = np.random.default_rng(fit_seed + 2)
        for _ in range(cfg.dpmle_restarts - 1):
            try:
                inits.append(best_mle(obs, cfg.n_upper, restarts=1, rng=rng, max_iter=cfg.max_iter).params)
            except DPMLEError:
                pass
        if "dpmle" in want:
            res = record(["dpmle"], lambda: nic_search(obs, cfg.n_upper, inits, cfg.draws, seed=fit_seed + 3,
                                                       options=opts))
            if res is not None:
                out["orders"]["dpmle"] = int(res.n_hat)
                out["dpmle_means"] = res.fit.merged.emissions.locations()[:, 0].tolist()
        if "dpmle-cov" in want:
            ns = [to_nonstationary(p, obs.n_covariates) for p in inits]
            res = record(["dpmle-cov"], lambda: nic_search(obs, cfg.n_upper, ns, cfg.draws, seed=fit_seed + 4,
                                                           options=opts))
            if res is not None:
                out["orders"]["dpmle-cov"] = int(res.n_hat)
                out["dpmle-cov_means"] = res.fit.merged.emissions.locations()[:, 0].tolist()
    out["seconds"].pop("_mle", None)
    out["errors"].pop("_mle", None)
    return out


def _task(args):
    return run_replicate(*args)


@dataclass
class BenchmarkReport:
    """Selected-order counts per method, scenario and sample size."""

    config: BenchmarkConfig
    replicates: list
    cells: list = field(default_factory=list)

    def __post_init__(self):
        if not self.cells:
            self.cells = self._aggregate()

    def _aggregate(self):
        cells = []
        for sc in self.config.scenarios:
            for T in self.config.sizes:
                reps = [r for r in self.replicates if r["scenario"] == sc and r["T"] == T]
                for m in self.config.methods:
                    picks = [r["orders"].get(m) for r in reps]
                    counts = {str(o): sum(p == o for p in picks) for o in range(1, self.config.n_upper + 1)}
                    failures = sum(p is None for p in picks)
                    cells.append({
                        "method": m, "scenario": sc, "T": T, "replicates": len(reps), "counts": counts,
                        "failures": failures, "success": counts.get(str(TRUE_ORDER), 0),
                        "success_rate": counts.get(str(TRUE_ORDER), 0) / len(reps) if reps else 0.0,
                    })
        return cells

    def cell(self, method, scenario, T):
        for c in self.cells:
            if (c["method"], c["scenario"], c["T"]) == (method, scenario, T):
                return c
        raise KeyError((method, scenario, T))

    def to_dict(self):
        reps = [{k: v for k, v in r.items() if k != "seconds"} for r in self.replicates]
        config = {k: v for k, v in asdict(self.config).items() if k != "jobs"}
        return {"config": config, "cells": self.cells, "replicates": reps}

    def timings(self):
        out = []
        for m in self.config.methods:
            secs = [r["seconds"][m] for r in self.replicates if m in r["seconds"]]
            out.append({"method": m, "n": len(secs), "total_s": float(np.sum(secs)) if secs else 0.0,
                        "mean_s": float(np.mean(secs)) if secs else 0.0,
                        "max_s": float(np.max(secs)) if secs else 0.0})
        return out

    def long_rows(self):
        rows = []
        for c in self.cells:
            for o, n in c["counts"].items():
                rows.append([c["method"], c["scenario"], c["T"], int(o), n])
        return rows

    def table(self):
        """Rows of the success-rate table: percentage of replicates selecting each order."""
        header = ["method", "scenario", "T"] + [f"N={o}" for o in range(1, self.config.n_upper + 1)] + ["failed"]
        rows = []
        for c in self.cells:
            pct = [100.0 * c["counts"][str(o)] / c["replicates"] for o in range(1, self.config.n_upper + 1)]
            rows.append([c["method"], c["scenario"], c["T"]] + [round(p, 1) for p in pct] + [c["failures"]])
        return header, rows


def run_benchmark(cfg, progress=None):
    """Run every (scenario, size, replicate) task; results are independent of ``jobs``."""
    tasks = [(cfg, sc, T, r) for sc in cfg.scenarios for T in cfg.sizes for r in range(cfg.replicates)]
    results = []
    if cfg.jobs == 1 or len(tasks) == 1:
        for t in tasks:
            results.append(_task(t))
            if progress:
                progress(results[-1])
    else:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(tasks))) as ex:
            for res in ex.map(_task, tasks):
                results.append(res)
                if progress:
                    progress(res)
    return BenchmarkReport(cfg, results)


def default_jobs():
    return max(1, os.cpu_count() or 1)
