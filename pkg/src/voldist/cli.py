"""Command-line frontend.

Subcommands cover simulation, spot-variance estimation, distribution
queries, goodness-of-fit testing, calibration, and the Monte Carlo
experiment runner.  Exit codes: 0 success, 2 usage, 3 unreadable input,
4 computation failure, 5 bad configuration.  Errors are emitted as a JSON
line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from .calib import IvMomentTargets, daily_iv_series, gmm_fit
from .experiments import (
    ConfigError,
    ExperimentConfig,
    load_return_series,
    run_experiment,
)
from .gof import bootstrap_estimated, bootstrap_known, model_null, rks, rl2
from .preavg import PreavgConfig
from .redf import build_redf
from .sim import JumpSpec, NoiseSpec, SvModelSpec, assemble_panel
from .spotvol import day_noise_variance, estimate_spot_path, path_frame

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNREADABLE = 3
EXIT_COMPUTE = 4
EXIT_CONFIG = 5

NULL_TO_FAMILY = {"gamma": "heston", "lognormal": "expou", "ig": "tsou"}


class UsageError(Exception):
    """Semantically invalid flag combination."""


class UnreadableInput(Exception):
    """Input file missing or not parseable."""


def _emit_error(kind: str, exc: Exception) -> None:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)


def _config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _payload(config: dict, body: dict) -> dict:
    return {
        "schema": 1,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": config.get("seed"),
        **body,
        "metadata": {"written_at": datetime.now(timezone.utc).isoformat()},
    }


def _write_or_print(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load_series(path: str):
    try:
        return load_return_series(path)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        raise UnreadableInput(str(exc)) from exc
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise UnreadableInput(f"{path}: {exc}") from exc


def _model_from_flags(ns) -> SvModelSpec:
    family = ns.family
    try:
        if family == "tsou":
            if ns.c is None or ns.lam is None:
                raise UsageError("tsou needs --c and --lam")
            return SvModelSpec.tsou(ns.kappa, ns.c, ns.lam)
        if ns.v0 is None or ns.xi is None:
            raise UsageError(f"{family} needs --v0 and --xi")
        rho = ns.rho if ns.rho is not None else -math.sqrt(0.5)
        if family == "heston":
            return SvModelSpec.heston(ns.kappa, ns.v0, ns.xi, rho)
        return SvModelSpec.expou(ns.kappa, ns.v0, ns.xi, rho)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _parse_param_list(text: str, family: str) -> dict:
    names = ("kappa", "c", "lam") if family == "tsou" else ("kappa", "v0", "xi")
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"--params needs three comma-separated values ({', '.join(names)})")
    try:
        return dict(zip(names, (float(p) for p in parts)))
    except ValueError as exc:
        raise UsageError(f"bad --params value: {exc}") from exc


def _spec_from_params(family: str, params: dict) -> SvModelSpec:
    try:
        if family == "tsou":
            return SvModelSpec.tsou(params["kappa"], params["c"], params["lam"])
        if family == "heston":
            return SvModelSpec.heston(params["kappa"], params["v0"], params["xi"])
        return SvModelSpec.expou(params["kappa"], params["v0"], params["xi"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------- subcommands


def cmd_simulate(ns) -> int:
    model = _model_from_flags(ns)
    jump = None
    if ns.jump_share is not None:
        if not 0.0 <= ns.jump_share < 1.0:
            raise UsageError("--jump-share must lie in [0, 1)")
        if ns.jump_share > 0.0:
            jump = JumpSpec.from_qv_share(ns.jump_lam, ns.jump_r, ns.jump_share)
    noise = NoiseSpec(ns.gamma)
    fine = ns.fine_steps if ns.fine_steps is not None else ns.n
    panel = assemble_panel(model, jump, noise, ns.T, fine, ns.n, ns.seed)
    panel.frame().to_csv(ns.out, index=False)

    config = {
        "command": "simulate", "model": model.describe(),
        "jump": dataclasses.asdict(jump) if jump else None,
        "gamma": ns.gamma, "T": ns.T, "n": ns.n, "fine_steps": fine, "seed": ns.seed,
    }
    _write_or_print(_payload(config, {"rows": ns.T * ns.n + 1, "out": ns.out}),
                    ns.out + ".json")
    print(ns.out)
    return EXIT_OK


def cmd_spotvol(ns) -> int:
    rs = _load_series(ns.input)
    cfg = PreavgConfig.from_delta(rs.delta_n, ns.theta)
    path = estimate_spot_path(rs, cfg, alpha_q=ns.trunc_alpha,
                              omega_bar=ns.omega_bar, truncate=not ns.no_truncate)
    path_frame(path).to_csv(ns.out, index=False)
    config = {"command": "spotvol", "input": ns.input, "truncate": not ns.no_truncate,
              "theta": ns.theta, "trunc_alpha": ns.trunc_alpha,
              "omega_bar": ns.omega_bar, "seed": None}
    body = {
        "days": path.days,
        "cells": int(path.v_hat.size),
        "negative_debiased": int(path.negative_count),
        "truncated_increments": 0 if path.truncated is None else int(path.truncated.sum()),
        "out": ns.out,
    }
    _write_or_print(_payload(config, body), ns.out + ".json")
    print(ns.out)
    return EXIT_OK


def _parse_quantile_grid(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(p) for p in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"--quantiles must look like 0.05:0.95:0.05, got {text!r}") from exc
    if not (0.0 < lo <= hi < 1.0) or step <= 0.0:
        raise UsageError("quantile grid must stay strictly inside (0, 1) with step > 0")
    count = int(round((hi - lo) / step)) + 1
    grid = lo + step * np.arange(count)
    return np.round(grid[grid < 1.0 - 1e-12], 10)


def cmd_redf(ns) -> int:
    rs = _load_series(ns.input)
    alphas = _parse_quantile_grid(ns.quantiles)
    path = estimate_spot_path(rs)
    F = build_redf(path)
    q = F.quantile(alphas)
    pd.DataFrame({"alpha": alphas, "quantile": q}).to_csv(ns.out, index=False)
    print(ns.out)
    return EXIT_OK


def cmd_gof(ns) -> int:
    if ns.null == "gig":
        raise UsageError(
            "gig has no volatility model to simulate under; bootstrap tests "
            "cover gamma, lognormal, and ig (use the library API for gig "
            "statistic evaluation)")
    family = NULL_TO_FAMILY[ns.null]
    rs = _load_series(ns.input)
    T = rs.days
    path = estimate_spot_path(rs)
    F = build_redf(path)

    if ns.params is not None:
        params = _parse_param_list(ns.params, family)
        provenance = "flags"
    else:
        fit = gmm_fit(IvMomentTargets.from_series(daily_iv_series(rs)), family,
                      seed=ns.seed)
        params = fit.params
        provenance = "gmm"
    spec = _spec_from_params(family, params)
    null = model_null(spec)
    observed = (
        rks(F, null, float(T)) if ns.stat == "rks"
        else rl2(F, null, float(T), weight_kind=ns.stat)
    )

    if ns.bootstrap == "known":
        report = bootstrap_known(
            spec, T, 1.0 / ns.edf_n, ns.stat, ns.B, ns.seed, observed, jobs=ns.jobs)
    else:
        omega_hat = math.sqrt(max(float(np.median(
            np.clip(day_noise_variance(rs), 0.0, None))), 0.0))
        report = bootstrap_estimated(
            spec, omega_hat, T, rs.delta_n, ns.stat, ns.B, ns.seed, observed,
            jobs=ns.jobs)

    config = {
        "command": "gof", "input": ns.input, "null": ns.null, "stat": ns.stat,
        "bootstrap": ns.bootstrap, "B": ns.B, "seed": ns.seed,
        "params": params, "param_provenance": provenance,
    }
    _write_or_print(_payload(config, {"model": spec.describe(), "report": report.to_dict()}),
                    ns.out)
    return EXIT_OK


def cmd_calibrate(ns) -> int:
    rs = _load_series(ns.input)
    iv = daily_iv_series(rs)
    fit = gmm_fit(IvMomentTargets.from_series(iv), ns.family, seed=ns.seed)
    config = {"command": "calibrate", "input": ns.input, "family": ns.family,
              "seed": ns.seed}
    body = {
        "family": fit.family,
        "params": fit.params,
        "objective": fit.objective,
        "init_objective": fit.init_objective,
        "converged": fit.converged,
        "projected": fit.projected,
        "diagnostics": fit.diagnostics,
        "days": int(iv.size),
    }
    _write_or_print(_payload(config, body), ns.out)
    return EXIT_OK


def _default_experiment(kind: str) -> dict:
    base = {
        "kind": kind,
        "model": {"family": "heston", "kappa": 0.05, "v0": 1.0, "xi": 0.2},
        "noise": {"gamma": 0.5},
        "n": 2340,
    }
    if kind == "redf-accuracy":
        base.update(T=1, replications=300,
                    jump={"lam": 3.0, "r": 0.5, "share": 0.2})
    elif kind == "clt-pivot":
        base.update(T=50, replications=300,
                    jump={"lam": 3.0, "r": 0.5, "share": 0.2})
    elif kind == "size-power":
        base.update(T=250, replications=150, B=200, jump=None,
                    null_family="heston", procedure="known")
    else:
        base.update(T=1, replications=1)
    return base


def cmd_experiment(ns) -> int:
    overrides = {
        "out_dir": ns.out_dir, "seed": ns.seed, "replications": ns.replications,
        "B": ns.B, "jobs": ns.jobs, "T": ns.T, "n": ns.n,
        "input_path": ns.input, "procedure": ns.procedure,
        "null_family": ns.null_family,
    }
    if ns.config is not None:
        if not os.path.exists(ns.config):
            raise UnreadableInput(f"config file not found: {ns.config}")
        cfg = ExperimentConfig.from_json(ns.config, **overrides)
    elif ns.kind is not None:
        cfg = ExperimentConfig.from_dict(_default_experiment(ns.kind), **overrides)
    else:
        raise UsageError("experiment needs --config or --kind")

    result = run_experiment(cfg)
    print(json.dumps({
        "kind": result.kind,
        "files": result.files,
        "failures": len(result.failures),
        "summary": result.summary,
    }, indent=2, sort_keys=True, default=str))
    return EXIT_OK


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voldist",
        description="Spot-variance distribution estimation, testing, and simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a noisy return panel to CSV")
    p.add_argument("--family", choices=("heston", "expou", "tsou"), required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--v0", type=float)
    p.add_argument("--xi", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--T", type=int, default=250)
    p.add_argument("--n", type=int, default=2340)
    p.add_argument("--fine-steps", type=int)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--jump-share", type=float)
    p.add_argument("--jump-lam", type=float, default=3.0)
    p.add_argument("--jump-r", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=20240817)
    p.add_argument("--out", default="panel.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("spotvol", help="estimate the spot-variance path from a panel")
    p.add_argument("--input", required=True)
    p.add_argument("--theta", type=float, default=1.0 / 3.0,
                   help="pre-averaging tuning scalar; window is floor(theta/sqrt(delta))")
    p.add_argument("--trunc-alpha", type=float, default=0.001,
                   help="tail mass of the normal quantile in the jump cutoffs")
    p.add_argument("--omega-bar", type=float, default=0.20,
                   help="cutoff decay exponent in (0, 0.25)")
    p.add_argument("--no-truncate", action="store_true")
    p.add_argument("--out", default="spot_path.csv")
    p.set_defaults(func=cmd_spotvol)

    p = sub.add_parser("redf", help="occupation-distribution quantiles from a panel")
    p.add_argument("--input", required=True)
    p.add_argument("--quantiles", default="0.05:0.95:0.05")
    p.add_argument("--out", default="quantiles.csv")
    p.set_defaults(func=cmd_redf)

    p = sub.add_parser("gof", help="bootstrap goodness-of-fit test")
    p.add_argument("--input", required=True)
    p.add_argument("--null", choices=("gamma", "lognormal", "ig", "gig"), required=True)
    p.add_argument("--stat", choices=("rks", "cvm", "ad"), default="rks")
    p.add_argument("--bootstrap", choices=("known", "estimated"), default="known")
    p.add_argument("--params", help="model parameters, comma separated; fitted if omitted")
    p.add_argument("-B", type=int, default=200)
    p.add_argument("--edf-n", type=int, default=390,
                   help="per-day grid for known-parameter replicate paths")
    p.add_argument("--seed", type=int, default=20240817)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="write the report JSON here instead of stdout")
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("calibrate", help="GMM fit of a model family to daily IV moments")
    p.add_argument("--input", required=True)
    p.add_argument("--family", choices=("heston", "expou", "tsou"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the fit JSON here instead of stdout")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment bundle")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--kind", choices=("redf-accuracy", "clt-pivot", "size-power", "empirical"))
    p.add_argument("--out-dir", default=os.environ.get("VOLDIST_OUT", "voldist_out"))
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("-B", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--input", help="return panel CSV for empirical experiments")
    p.add_argument("--procedure", choices=("known", "estimated"))
    p.add_argument("--null-family", choices=("heston", "expou", "tsou"))
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return ns.func(ns)
    except UsageError as exc:
        _emit_error("usage", exc)
        return EXIT_USAGE
    except UnreadableInput as exc:
        _emit_error("unreadable", exc)
        return EXIT_UNREADABLE
    except ConfigError as exc:
        _emit_error("config", exc)
        return EXIT_CONFIG
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        _emit_error("unreadable", exc)
        return EXIT_UNREADABLE
    except Exception as exc:
        _emit_error("computation", exc)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
