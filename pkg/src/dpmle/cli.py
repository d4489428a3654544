"""Command-line interface: ``dpmle simulate | preprocess | fit | benchmark | report``.

Exit codes: 0 success, 2 configuration error, 3 parse error, 4 fitting or
convergence failure, 5 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import METHODS, BenchmarkConfig, default_jobs, run_benchmark
from .config import load_config, settings_for
from .dpmle import FitOptions
from .errors import ConfigError, ConvergenceError, DPMLEError, FittingError, ParseError, SearchError
from .hmm import forward_backward, viterbi
from .io import (atomic_write, dumps_json, processed_csv, read_observations, read_tracks, write_simulation,
                 _csv_text)
from .movement import preprocess
from .scenarios import ScenarioConfig, simulate
from .selection import best_mle, default_m, ic_order_select, nic_search, to_nonstationary

EXIT_OK, EXIT_CONFIG, EXIT_PARSE, EXIT_FIT, EXIT_IO = 0, 2, 3, 4, 5
OUTPUT_ENV = "DPMLE_OUTPUT_DIR"

log = logging.getLogger("dpmle")


def _int_list(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


# defaults live here rather than in argparse so that config files can sit between them and the flags
DEFAULTS = {
    "simulate": {"T": 5000, "M": None, "prefix": None},
    "preprocess": {"gap_hours": 12, "min_len": 6, "max_missing": 0.5, "output": None},
    "fit": {"method": "dpmle", "orders": [2, 3, 4], "n_upper": 4, "draws": 50, "restarts": 150,
            "dpmle_restarts": 10, "nonstationary": False, "covariates": None, "families": None,
            "lambda_bounds": [1.0, 5.0], "cn_bounds": [1.0, 5.0], "max_iter": 500, "tol": 1e-6,
            "output": None},
    "benchmark": {"scenarios": [1], "T": [5000], "replicates": 20, "methods": ["aic", "bic", "dpmle"],
                  "draws": 20, "restarts": 10, "dpmle_restarts": 4, "n_upper": 4, "jobs": None,
                  "max_iter": 500},
    "report": {},
}
REQUIRES_SEED = {"simulate", "fit", "benchmark"}
LIST_KEYS = {"orders": int, "scenarios": int, "T": int, "methods": str, "covariates": str, "families": str,
             "lambda_bounds": float, "cn_bounds": float}


def _as_list(cmd, key, v):
    if key not in LIST_KEYS or v is None or (key == "T" and cmd != "benchmark"):
        return v
    cast = LIST_KEYS[key]
    if isinstance(v, str):
        v = v.split(",")
    if not isinstance(v, list):
        v = [v]
    try:
        return [cast(x.strip() if isinstance(x, str) else x) for x in v]
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {v!r}") from None


def resolve(args):
    """Merge defaults < config file < command-line flags into a settings dict."""
    cmd = args.command
    settings = dict(DEFAULTS[cmd])
    if args.config:
        file_settings = settings_for(load_config(args.config), cmd)
        allowed = set(DEFAULTS[cmd]) | {"seed", "out_dir", "scenario", "data", "input"}
        unknown = sorted(set(file_settings) - allowed)
        if unknown:
            raise ConfigError(f"unknown key(s) for {cmd}: {', '.join(unknown)}")
        settings.update(file_settings)
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "config", "func", "verbose"):
            settings[k] = v
    for k in list(settings):
        settings[k] = _as_list(cmd, k, settings[k])
    if cmd in REQUIRES_SEED and settings.get("seed") is None:
        raise ConfigError(f"{cmd} needs a seed (--seed or 'seed = ...' in the config file)")
    return settings


# -- commands ------------------------------------------------------------------------------------


def cmd_simulate(s, out):
    if s.get("scenario") is None:
        raise ConfigError("simulate needs --scenario")
    cfg = ScenarioConfig(int(s["scenario"]), T=int(s["T"]), M=s.get("M"), seed=int(s["seed"]))
    sim = simulate(cfg)
    d = _output_dir_from(s)
    prefix = s.get("prefix") or f"scenario{cfg.scenario}_T{cfg.T}_seed{cfg.seed}"
    csv_path, truth_path = d / f"{prefix}.csv", d / f"{prefix}.truth.json"
    write_simulation(sim, csv_path, truth_path)
    out.write(f"{csv_path}\t{sim.obs.n_obs} rows\t{len(sim.obs.series)} series\n{truth_path}\n")
    return EXIT_OK


def _output_dir_from(s):
    return Path(s.get("out_dir") or os.environ.get(OUTPUT_ENV) or ".")


def cmd_preprocess(s, out):
    if not s.get("input"):
        raise ConfigError("preprocess needs --input")
    tracks = read_tracks(s["input"])
    series, summary = preprocess(tracks, int(s["gap_hours"]), int(s["min_len"]), float(s["max_missing"]))
    names = tracks[0].covariate_names if tracks else ()
    target = Path(s["output"]) if s.get("output") else _output_dir_from(s) / (Path(s["input"]).stem + "_steps.csv")
    summary_doc = summary.to_dict()
    if not series:
        summary_doc["note"] = "no segment met the minimum-length and missing-fraction rules"
    atomic_write(target, processed_csv(series, names))
    summary_path = target.with_suffix(".summary.json")
    atomic_write(summary_path, dumps_json(summary_doc))
    out.write(f"{target}\t{len(series)} segments\t{summary.n_fixes_kept}/{summary.n_fixes_in} fixes kept\n")
    if not series:
        out.write(summary_doc["note"] + "\n")
    out.write(f"{summary_path}\n")
    return EXIT_OK


def _families(obs, s):
    fams = s.get("families")
    if fams:
        if len(fams) != len(obs.channels):
            raise ConfigError(f"{len(fams)} families given for {len(obs.channels)} channels")
        return tuple(fams)
    return ("gamma", "vonmises")[: len(obs.channels)]


def _decoded(obs, params):
    fb = forward_backward(obs, params)
    return {"viterbi": [p.tolist() for p in viterbi(obs, params)],
            "posterior": [np.round(p.posterior, 10).tolist() for p in fb.passes]}


def cmd_fit(s, out):
    if not s.get("data"):
        raise ConfigError("fit needs --data")
    obs = read_observations(s["data"], s.get("covariates") if s["nonstationary"] else [])
    if s["nonstationary"] and obs.n_covariates == 0:
        raise ConfigError("--nonstationary needs at least one covariate column")
    fams = _families(obs, s)
    seed = int(s["seed"])
    doc = {"method": s["method"], "data": str(s["data"]), "n_obs": obs.n_obs, "n_series": len(obs.series),
           "families": list(fams), "covariates": list(obs.covariate_names), "seed": seed,
           "nonstationary": bool(s["nonstationary"])}
    if s["method"] == "mle":
        sel = ic_order_select(obs, s["orders"], fams, int(s["restarts"]), seed, bool(s["nonstationary"]),
                              int(s["max_iter"]), float(s["tol"]))
        best = sel["BIC"].order
        fit = sel.fits[best]
        doc.update({
            "n_hat": int(best),
            "criteria": {k: r.to_dict() for k, r in sel.reports.items()},
            "estimates": fit.params.to_dict(),
            "objective_trace": fit.trace,
            "convergence": {"converged": fit.converged, "n_iter": fit.n_iter},
            "decoded": _decoded(obs, fit.params),
        })
    elif s["method"] == "dpmle":
        rng = np.random.default_rng(seed)
        inits = [best_mle(obs, int(s["n_upper"]), fams, int(s["restarts"]), rng, int(s["max_iter"]),
                          float(s["tol"])).params]
        for _ in range(int(s["dpmle_restarts"]) - 1):
            inits.append(best_mle(obs, int(s["n_upper"]), fams, 1, rng, int(s["max_iter"]), float(s["tol"])).params)
        if s["nonstationary"]:
            inits = [to_nonstationary(p, obs.n_covariates) for p in inits]
        bounds = (tuple(s["lambda_bounds"]), tuple(s["cn_bounds"]))
        res = nic_search(obs, int(s["n_upper"]), inits, int(s["draws"]), bounds, seed + 1,
                         options=FitOptions(max_iter=int(s["max_iter"]), tol=float(s["tol"])))
        f = res.fit
        doc.update({
            "n_hat": int(f.n_hat),
            "penalty": {"lam": res.penalty.lam, "c_n": res.penalty.c_n, "a": res.penalty.a,
                        "m": res.penalty.m, "merge_tol": res.penalty.merge_tol},
            "scad_multiplier": default_m(obs),
            "criteria": {"NIC": res.report.to_dict()},
            "estimates": f.params.to_dict(),
            "merged": f.merged.to_dict(),
            "groups": f.groups,
            "loglik": f.loglik,
            "merged_loglik": f.merged_loglik,
            "objective_trace": f.trace,
            "convergence": {"converged": f.converged, "n_iter": f.n_iter},
            "decoded": _decoded(obs, f.merged),
        })
    else:
        raise ConfigError(f"unknown method {s['method']!r}; use mle or dpmle")
    target = Path(s["output"]) if s.get("output") else _output_dir_from(s) / (Path(s["data"]).stem + f"_{s['method']}.json")
    atomic_write(target, dumps_json(doc))
    out.write(f"{target}\tN_hat={doc['n_hat']}\n")
    return EXIT_OK


def cmd_benchmark(s, out):
    cfg = BenchmarkConfig(scenarios=s["scenarios"], sizes=s["T"], replicates=int(s["replicates"]),
                          methods=s["methods"], draws=int(s["draws"]), restarts=int(s["restarts"]),
                          dpmle_restarts=int(s["dpmle_restarts"]), n_upper=int(s["n_upper"]), seed=int(s["seed"]),
                          jobs=int(s["jobs"] or default_jobs()), max_iter=int(s["max_iter"]))

    def progress(r):
        log.info("scenario %s T=%s replicate %s: %s", r["scenario"], r["T"], r["replicate"], r["orders"])

    report = run_benchmark(cfg, progress)
    d = _output_dir_from(s)
    header, rows = report.table()
    paths = {
        "report": d / "benchmark.json",
        "table": d / "benchmark_table.csv",
        "long": d / "benchmark_long.csv",
        "timings": d / "benchmark_timings.json",
    }
    atomic_write(paths["report"], dumps_json(report.to_dict()))
    atomic_write(paths["table"], _csv_text(header, rows))
    atomic_write(paths["long"], _csv_text(["method", "scenario", "T", "order", "count"], report.long_rows()))
    atomic_write(paths["timings"], dumps_json(report.timings()))
    out.write(_format_table(header, rows))
    failed = sum(c["failures"] for c in report.cells)
    if failed:
        out.write(f"warning: {failed} method fits failed; see 'errors' in {paths['report']}\n")
    for p in paths.values():
        out.write(f"{p}\n")
    return EXIT_OK


def _format_table(header, rows):
    cols = [header] + [[str(v) for v in r] for r in rows]
    width = [max(len(r[i]) for r in cols) for i in range(len(header))]
    return "".join("  ".join(v.rjust(w) for v, w in zip(r, width)) + "\n" for r in cols)


def cmd_report(s, out):
    if not s.get("input"):
        raise ConfigError("report needs --input")
    try:
        with open(s["input"]) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{s['input']}: invalid JSON ({exc.msg})", exc.lineno) from None
    if "cells" in doc:
        n_upper = doc["config"]["n_upper"]
        header = ["method", "scenario", "T"] + [f"N={o}" for o in range(1, n_upper + 1)] + ["failed"]
        rows = [[c["method"], c["scenario"], c["T"]]
                + [round(100.0 * c["counts"][str(o)] / c["replicates"], 1) for o in range(1, n_upper + 1)]
                + [c["failures"]] for c in doc["cells"]]
        out.write(_format_table(header, rows))
    elif "n_hat" in doc:
        out.write(f"method {doc['method']}  N_hat {doc['n_hat']}  n_obs {doc['n_obs']}\n")
        for name, rep in doc.get("criteria", {}).items():
            out.write(f"{name}:\n")
            keys = [k for k in ("order", "lam", "c_n", "loglik", "k", "value") if k in rep["candidates"][0]]
            rows = [[(f"{c[k]:.6g}" if isinstance(c[k], float) else c[k]) for k in keys]
                    + (["*"] if i == rep["selected"] else [""]) for i, c in enumerate(rep["candidates"])]
            out.write(_format_table(keys + ["sel"], rows))
        est = doc.get("merged") or doc["estimates"]
        for fam, p in zip(est["emissions"]["families"], est["emissions"]["params"]):
            for k, v in p.items():
                out.write(f"{fam}.{k}: {', '.join(f'{x:.4g}' for x in v)}\n")
    else:
        raise ParseError(f"{s['input']}: not a fit result or benchmark report")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="dpmle", description="Order selection for hidden Markov models by "
                                "double-penalised likelihood.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML-like key = value settings file")
    common.add_argument("--out-dir", dest="out_dir", help=f"output directory (default ${OUTPUT_ENV} or .)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", parents=[common], help="generate a scenario dataset")
    sp.add_argument("--scenario", type=int, choices=range(1, 7))
    sp.add_argument("--T", type=int, dest="T")
    sp.add_argument("--M", type=int, dest="M")
    sp.add_argument("--prefix")

    sp = sub.add_parser("preprocess", parents=[common], help="turn GPS fixes into hourly steps and angles")
    sp.add_argument("--input")
    sp.add_argument("--output")
    sp.add_argument("--gap-hours", dest="gap_hours", type=int)
    sp.add_argument("--min-len", dest="min_len", type=int)
    sp.add_argument("--max-missing", dest="max_missing", type=float)

    sp = sub.add_parser("fit", parents=[common], help="fit by multi-start MLE (AIC/BIC) or DPMLE (NIC)")
    sp.add_argument("--data")
    sp.add_argument("--output")
    sp.add_argument("--method", choices=("mle", "dpmle"))
    sp.add_argument("--orders", type=_int_list)
    sp.add_argument("--n-upper", dest="n_upper", type=int)
    sp.add_argument("--draws", type=int)
    sp.add_argument("--restarts", type=int)
    sp.add_argument("--dpmle-restarts", dest="dpmle_restarts", type=int)
    sp.add_argument("--nonstationary", action="store_true", default=None)
    sp.add_argument("--covariates", type=_str_list)
    sp.add_argument("--families", type=_str_list)
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--tol", type=float)

    sp = sub.add_parser("benchmark", parents=[common], help="replicated order-selection experiment")
    sp.add_argument("--scenarios", type=_int_list)
    sp.add_argument("--T", dest="T", type=_int_list)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--methods", type=_str_list, help=f"subset of {','.join(METHODS)}")
    sp.add_argument("--draws", type=int)
    sp.add_argument("--restarts", type=int)
    sp.add_argument("--dpmle-restarts", dest="dpmle_restarts", type=int)
    sp.add_argument("--n-upper", dest="n_upper", type=int)
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--max-iter", dest="max_iter", type=int)

    sp = sub.add_parser("report", parents=[common], help="print a fit result or benchmark report")
    sp.add_argument("--input")
    return p


COMMANDS = {"simulate": cmd_simulate, "preprocess": cmd_preprocess, "fit": cmd_fit,
            "benchmark": cmd_benchmark, "report": cmd_report}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        settings = resolve(args)
        return COMMANDS[args.command](settings, out)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, FittingError, SearchError, DPMLEError) as exc:
        print(f"fitting failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
