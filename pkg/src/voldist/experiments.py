"""Monte Carlo experiment orchestration and artifact emission.

Each experiment kind maps a config to a bundle of CSV/JSON artifacts in the
output directory.  Artifacts embed the config hash and seed; re-running the
same config reproduces every byte except the ``metadata`` field of the
summary JSON, which carries the wall-clock timestamp.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from .calib import IvMomentTargets, daily_iv_series, gmm_fit
from .cirlaw import CirParams, longrun_variance_analytic, stationary_law
from .gof import GmmEstimator, _statistic, model_null, pvalue
from .parallel import indexed_map, replicate_seeds
from .redf import build_redf, clt_pivot, longrun_variance
from .sim import (
    JumpSpec,
    NoiseSpec,
    SvModelSpec,
    assemble_panel,
    simulate_expou,
    simulate_heston,
    simulate_tsou,
)
from .spotvol import SpotVariancePath, day_noise_variance, estimate_spot_path, path_frame
from .ticks import ReturnSeries

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "run_experiment",
    "load_return_series",
]

KINDS = ("redf-accuracy", "clt-pivot", "size-power", "empirical")
ALPHA_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: SvModelSpec
    jump: JumpSpec | None = None
    noise: NoiseSpec = NoiseSpec(0.0)
    T: int = 1
    n: int = 2340
    fine_steps: int | None = None
    replications: int = 100
    B: int = 200
    seed: int = 20240817
    jobs: int = 1
    out_dir: str = "."
    alphas: tuple = ALPHA_GRID
    pivot_levels: tuple = (0.25, 0.5, 0.75)
    null_family: str | None = None
    procedure: str = "known"
    stats: tuple = ("rks", "cvm")
    bootstrap_delta: float = 1.0 / 390
    input_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.B < 1:
            raise ConfigError("B must be at least 1")
        if self.T < 1 or self.n < 2:
            raise ConfigError("need T >= 1 and n >= 2")
        if self.procedure not in ("known", "estimated"):
            raise ConfigError(f"unknown procedure {self.procedure!r}")
        bad = [s for s in self.stats if s not in ("rks", "cvm", "ad")]
        if bad:
            raise ConfigError(f"unknown statistics {bad}")
        if self.kind == "clt-pivot" and self.model.family != "heston":
            raise ConfigError("the pivot oracle requires the heston family")
        if self.kind == "empirical" and not self.input_path:
            raise ConfigError("empirical experiments need input_path")

    @property
    def fine(self) -> int:
        return self.fine_steps if self.fine_steps is not None else self.n

    @property
    def null(self) -> str:
        return self.null_family if self.null_family is not None else self.model.family

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "model": self.model.describe(),
            "jump": dataclasses.asdict(self.jump) if self.jump is not None else None,
            "noise": {"gamma": self.noise.gamma},
            "T": self.T,
            "n": self.n,
            "fine_steps": self.fine,
            "replications": self.replications,
            "B": self.B,
            "seed": self.seed,
            "alphas": list(self.alphas),
            "pivot_levels": list(self.pivot_levels),
            "null_family": self.null,
            "procedure": self.procedure,
            "stats": list(self.stats),
            "bootstrap_delta": self.bootstrap_delta,
            "input_path": self.input_path,
        }
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "ExperimentConfig":
        d = {**d, **{k: v for k, v in overrides.items() if v is not None}}
        try:
            model = _model_from_dict(d["model"])
        except KeyError as exc:
            raise ConfigError(f"config missing required key: {exc}") from exc
        jump = _jump_from_dict(d.get("jump"))
        noise = NoiseSpec(float(d.get("noise", {}).get("gamma", 0.0)))
        kw = {}
        for name in ("T", "n", "fine_steps", "replications", "B", "seed", "jobs",
                     "out_dir", "null_family", "procedure", "input_path",
                     "bootstrap_delta"):
            if d.get(name) is not None:
                kw[name] = d[name]
        for name in ("alphas", "pivot_levels", "stats"):
            if d.get(name) is not None:
                kw[name] = tuple(d[name])
        try:
            return cls(kind=d["kind"], model=model, jump=jump, noise=noise, **kw)
        except KeyError as exc:
            raise ConfigError(f"config missing required key: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_dict(d, **overrides)


def _model_from_dict(d: dict) -> SvModelSpec:
    family = d["family"]
    try:
        if family == "tsou":
            return SvModelSpec.tsou(float(d["kappa"]), float(d["c"]), float(d["lam"]))
        if family == "heston":
            rho = float(d.get("rho", -math.sqrt(0.5)))
            return SvModelSpec.heston(float(d["kappa"]), float(d["v0"]), float(d["xi"]), rho)
        if family == "expou":
            rho = float(d.get("rho", -math.sqrt(0.5)))
            return SvModelSpec.expou(float(d["kappa"]), float(d["v0"]), float(d["xi"]), rho)
    except KeyError as exc:
        raise ConfigError(f"model config missing parameter {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown model family {family!r}")


def _jump_from_dict(d: dict | None) -> JumpSpec | None:
    if d is None:
        return None
    try:
        if "share" in d:
            return JumpSpec.from_qv_share(
                float(d["lam"]), float(d["r"]), float(d["share"]),
                float(d.get("mean_variance", 1.0)),
            )
        return JumpSpec(float(d["c"]), float(d["lam"]), float(d["r"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad jump config: {exc}") from exc


@dataclass
class ExperimentResult:
    kind: str
    summary: dict
    files: list
    failures: list


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False)


def _summary_payload(cfg: ExperimentConfig, results: dict, failures: list) -> dict:
    return {
        "schema": 1,
        "kind": cfg.kind,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "results": results,
        "failures": failures,
        "metadata": {"written_at": datetime.now(timezone.utc).isoformat()},
    }


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.kind == "redf-accuracy":
        return run_redf_accuracy(cfg)
    if cfg.kind == "clt-pivot":
        return run_clt_pivot(cfg)
    if cfg.kind == "size-power":
        return run_size_power(cfg)
    return run_empirical(cfg)


# ------------------------------------------------------------- redf accuracy


def _rep_redf_accuracy(args):
    idx, cfg, seed = args
    try:
        panel = assemble_panel(cfg.model, cfg.jump, cfg.noise, cfg.T, cfg.fine, cfg.n, seed)
        alphas = np.asarray(cfg.alphas)
        q_est = build_redf(estimate_spot_path(panel.returns())).quantile(alphas)
        q_true = build_redf(panel.true_path()).quantile(alphas)
        return idx, q_est, q_true
    except Exception as exc:
        return idx, None, f"{type(exc).__name__}: {exc}"


def run_redf_accuracy(cfg: ExperimentConfig) -> ExperimentResult:
    """Quantile accuracy of the estimated occupation distribution.

    For each replication the estimated quantile curve is compared to the
    same path's true-variance quantile curve; the summary reports bias and
    mean absolute relative error per quantile level.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    seeds = replicate_seeds(cfg.seed, cfg.replications)
    args = [(i, cfg, seeds[i]) for i in range(cfg.replications)]
    out = indexed_map(_rep_redf_accuracy, args, jobs=cfg.jobs)

    failures = [{"replication": i, "error": err} for i, q, err in out if q is None]
    rows = []
    rel_errors = []
    for i, q_est, q_true in out:
        if q_est is None:
            continue
        rel = q_est / q_true - 1.0
        rel_errors.append(rel)
        for a, qe, qt, r in zip(cfg.alphas, q_est, q_true, rel):
            rows.append((i, a, qe, qt, r))
    if not rel_errors:
        raise RuntimeError("every replication failed")
    rel = np.array(rel_errors)
    bias = rel.mean(axis=0)
    mae = np.abs(rel).mean(axis=0)

    reps_csv = os.path.join(cfg.out_dir, "redf_accuracy_replications.csv")
    _write_csv(reps_csv, pd.DataFrame(
        rows, columns=["replication", "alpha", "q_est", "q_true", "rel_err"]))
    summary_csv = os.path.join(cfg.out_dir, "redf_accuracy_summary.csv")
    _write_csv(summary_csv, pd.DataFrame(
        {"alpha": cfg.alphas, "bias": bias, "mae": mae}))

    mid = [(a, b) for a, b in zip(cfg.alphas, bias) if 0.25 <= a <= 0.75]
    results = {
        "alphas": list(cfg.alphas),
        "bias": [float(b) for b in bias],
        "mae": [float(m) for m in mae],
        "max_abs_bias_mid": float(max(abs(b) for _, b in mid)) if mid else None,
        "completed": int(rel.shape[0]),
    }
    summary_json = os.path.join(cfg.out_dir, "redf_accuracy_summary.json")
    _write_json(summary_json, _summary_payload(cfg, results, failures))
    return ExperimentResult(cfg.kind, results, [reps_csv, summary_csv, summary_json], failures)


# ------------------------------------------------------------------ clt pivot


def _rep_clt_pivot(args):
    idx, cfg, x_levels, sigma2_oracle, seed = args
    try:
        panel = assemble_panel(cfg.model, cfg.jump, cfg.noise, cfg.T, cfg.fine, cfg.n, seed)
        path = estimate_spot_path(panel.returns())
        redf = build_redf(path)
        f_nt = redf.cdf(np.asarray(x_levels))
        out = []
        for level, x, f_hat, sig2 in zip(cfg.pivot_levels, x_levels, f_nt, sigma2_oracle):
            est = longrun_variance(path, x)
            piv_oracle = clt_pivot(f_hat, level, sig2, float(cfg.T))
            piv_est = (
                clt_pivot(f_hat, level, est.value, float(cfg.T))
                if est.value > 0.0
                else float("nan")
            )
            out.append((level, x, f_hat, piv_oracle, piv_est))
        return idx, out, None
    except Exception as exc:
        return idx, None, f"{type(exc).__name__}: {exc}"


def run_clt_pivot(cfg: ExperimentConfig) -> ExperimentResult:
    """Sampling distribution of the scaled occupation-frequency pivot.

    The pivot divides by the exact finite-span long-run standard deviation
    from the square-root-model quadrature oracle; a second column uses each
    replication's own variance estimate instead.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    params = CirParams(cfg.model.kappa, cfg.model.v0, cfg.model.xi)
    law = stationary_law(params)
    x_levels = [float(law.ppf(a)) for a in cfg.pivot_levels]
    sigma2_oracle = [
        longrun_variance_analytic(x, params, horizon=float(cfg.T), taper=True)
        for x in x_levels
    ]

    seeds = replicate_seeds(cfg.seed, cfg.replications)
    args = [(i, cfg, x_levels, sigma2_oracle, seeds[i]) for i in range(cfg.replications)]
    out = indexed_map(_rep_clt_pivot, args, jobs=cfg.jobs)

    failures = [{"replication": i, "error": err} for i, rows, err in out if rows is None]
    rows = []
    for i, rep_rows, _ in out:
        if rep_rows is None:
            continue
        for level, x, f_hat, piv_o, piv_e in rep_rows:
            rows.append((i, level, x, f_hat, piv_o, piv_e))
    if not rows:
        raise RuntimeError("every replication failed")
    frame = pd.DataFrame(
        rows, columns=["replication", "level", "x", "f_nt", "pivot_oracle", "pivot_est"])

    reps_csv = os.path.join(cfg.out_dir, "clt_pivot_replications.csv")
    _write_csv(reps_csv, frame)

    per_level = []
    for level, x, s2 in zip(cfg.pivot_levels, x_levels, sigma2_oracle):
        sub = frame[frame["level"] == level]
        po = sub["pivot_oracle"].to_numpy()
        pe = sub["pivot_est"].to_numpy()
        pe = pe[np.isfinite(pe)]
        per_level.append({
            "level": float(level),
            "x": float(x),
            "sigma2_oracle": float(s2),
            "mean": float(po.mean()),
            "variance": float(po.var(ddof=1)),
            "mean_est": float(pe.mean()) if pe.size else None,
            "variance_est": float(pe.var(ddof=1)) if pe.size > 1 else None,
            "n": int(po.size),
        })
    summary_csv = os.path.join(cfg.out_dir, "clt_pivot_summary.csv")
    _write_csv(summary_csv, pd.DataFrame(per_level))
    results = {"levels": per_level, "completed": int(frame["replication"].nunique())}
    summary_json = os.path.join(cfg.out_dir, "clt_pivot_summary.json")
    _write_json(summary_json, _summary_payload(cfg, results, failures))
    return ExperimentResult(cfg.kind, results, [reps_csv, summary_csv, summary_json], failures)


# ----------------------------------------------------------------- size-power


def _true_path_stat(spec, T, n, null, stats, seed):
    if spec.family == "heston":
        v = simulate_heston(spec, T, n, seed)[0]
    elif spec.family == "expou":
        v = simulate_expou(spec, T, n, seed)[0]
    else:
        v = simulate_tsou(spec, T, n, seed)
    path = SpotVariancePath(1.0 / n, v[:-1], np.full(T, n))
    redf = build_redf(path)
    return {s: _statistic(redf, null, float(T), s) for s in stats}


def _recipe_returns(spec, omega_hat, T, n, seed) -> ReturnSeries:
    s_vol, s_price, s_noise = seed.spawn(3)
    if spec.family == "heston":
        v = simulate_heston(spec, T, n, s_vol)[0]
    elif spec.family == "expou":
        v = simulate_expou(spec, T, n, s_vol)[0]
    else:
        v = simulate_tsou(spec, T, n, s_vol)
    sigma = np.sqrt(np.maximum(v[:-1], 0.0))
    phi1 = np.random.default_rng(s_price).standard_normal(T * n)
    phi2 = np.random.default_rng(s_noise).standard_normal(T * n)
    values = sigma * math.sqrt(1.0 / n) * phi1 + omega_hat * phi2
    return ReturnSeries(1.0 / n, values, np.full(T, n))


def _trial_size_power(args):
    idx, cfg, seed = args
    try:
        s_data, s_boot = seed.spawn(2)
        panel = assemble_panel(cfg.model, cfg.jump, cfg.noise, cfg.T, cfg.fine, cfg.n, s_data)
        rs = panel.returns()
        path = estimate_spot_path(rs)
        redf = build_redf(path)
        boot_seeds = s_boot.spawn(cfg.B)
        dropped = 0

        if cfg.procedure == "known":
            null_spec = cfg.model
            null = model_null(null_spec)
            observed = {s: _statistic(redf, null, float(cfg.T), s) for s in cfg.stats}
            n_edf = round(1.0 / cfg.bootstrap_delta)
            reps = {s: [] for s in cfg.stats}
            for b in range(cfg.B):
                stat = _true_path_stat(null_spec, cfg.T, n_edf, null, cfg.stats, boot_seeds[b])
                for s in cfg.stats:
                    reps[s].append(stat[s])
        else:
            fit = gmm_fit(
                IvMomentTargets.from_series(daily_iv_series(rs)), cfg.null,
                restarts=3,
                options={"xatol": 1e-8, "fatol": 1e-13, "maxfev": 4000, "maxiter": 4000},
            )
            null_spec = fit.model_spec()
            null = model_null(null_spec)
            observed = {s: _statistic(redf, null, float(cfg.T), s) for s in cfg.stats}
            omega_hat = math.sqrt(max(float(np.median(
                np.clip(day_noise_variance(rs), 0.0, None))), 0.0))
            hook = GmmEstimator(
                cfg.null, restarts=1,
                options={"xatol": 1e-7, "fatol": 1e-12, "maxfev": 2000, "maxiter": 2000},
            )
            reps = {s: [] for s in cfg.stats}
            for b in range(cfg.B):
                rs_b = _recipe_returns(null_spec, omega_hat, cfg.T, cfg.n, boot_seeds[b])
                try:
                    path_b = estimate_spot_path(rs_b)
                    redf_b = build_redf(path_b)
                    refit = hook(rs_b).model_spec()
                    null_b = model_null(refit)
                    for s in cfg.stats:
                        reps[s].append(_statistic(redf_b, null_b, float(cfg.T), s))
                except Exception:
                    dropped += 1

        if any(len(reps[s]) == 0 for s in cfg.stats):
            raise RuntimeError("every bootstrap replicate failed")
        stat_rows = {
            s: (observed[s], pvalue(observed[s], np.array(reps[s]))) for s in cfg.stats
        }
        return idx, stat_rows, dropped, None
    except Exception as exc:
        return idx, None, 0, f"{type(exc).__name__}: {exc}"


def run_size_power(cfg: ExperimentConfig) -> ExperimentResult:
    """Rejection-rate table for the bootstrap tests at the 5% level.

    Each trial simulates a fresh data panel from the configured model, tests
    the configured null family with the chosen procedure, and records the
    bootstrap p-value per statistic.  Procedure ``known`` holds the null
    parameters fixed (true-path replicates on the ``bootstrap_delta`` grid);
    ``estimated`` re-fits per replicate through the full noisy pipeline.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.procedure == "known" and cfg.null != cfg.model.family:
        raise ConfigError("known-parameter tests need null_family == model family")
    seeds = replicate_seeds(cfg.seed, cfg.replications)
    args = [(i, cfg, seeds[i]) for i in range(cfg.replications)]
    out = indexed_map(_trial_size_power, args, jobs=cfg.jobs)

    failures = [{"trial": i, "error": err} for i, rows, _, err in out if rows is None]
    rows = []
    dropped_total = 0
    for i, stat_rows, dropped, _ in out:
        if stat_rows is None:
            continue
        dropped_total += dropped
        for s, (obs, p) in stat_rows.items():
            rows.append((i, s, obs, p, p <= 0.05, dropped))
    if not rows:
        raise RuntimeError("every trial failed")
    frame = pd.DataFrame(
        rows, columns=["trial", "stat", "observed", "p_value", "reject05", "dropped"])

    trials_csv = os.path.join(cfg.out_dir, "size_power_trials.csv")
    _write_csv(trials_csv, frame)

    table = []
    rates = {}
    for s in cfg.stats:
        sub = frame[frame["stat"] == s]
        rate = float(sub["reject05"].mean())
        rates[s] = rate
        table.append({
            "stat": s,
            "procedure": cfg.procedure,
            "trials": int(sub.shape[0]),
            "rejection_rate_05": rate,
        })
    table_csv = os.path.join(cfg.out_dir, "size_power_table.csv")
    _write_csv(table_csv, pd.DataFrame(table))

    results = {
        "rejection_rates_05": rates,
        "trials_completed": int(frame["trial"].nunique()),
        "replicates_dropped": int(dropped_total),
    }
    summary_json = os.path.join(cfg.out_dir, "size_power_summary.json")
    _write_json(summary_json, _summary_payload(cfg, results, failures))
    return ExperimentResult(cfg.kind, results, [trials_csv, table_csv, summary_json], failures)


# ------------------------------------------------------------------ empirical


def load_return_series(path: str) -> ReturnSeries:
    """Read a return panel from CSV.

    Two layouts are accepted: long returns with columns (day, ret), or a
    log-price panel with columns (day, cell, z) as written by the simulate
    command, from which returns are reconstructed by differencing.  The grid
    spacing is one over the per-day return count, which must be constant.
    """
    frame = pd.read_csv(path)
    cols = set(frame.columns)
    if {"day", "ret"} <= cols:
        frame = frame.sort_values("day", kind="stable")
        day_lengths = frame.groupby("day", sort=True).size().to_numpy()
        values = frame["ret"].to_numpy(dtype=np.float64)
    elif {"day", "cell", "z"} <= cols:
        frame = frame.sort_values(["day", "cell"], kind="stable")
        z = frame["z"].to_numpy(dtype=np.float64)
        day_lengths = frame.groupby("day", sort=True).size().to_numpy().copy()
        day_lengths[-1] -= 1  # the final close is the only unshared boundary
        values = np.diff(z)
    else:
        raise ValueError(
            f"{path}: need columns (day, ret) or (day, cell, z), found {sorted(cols)}")
    if np.unique(day_lengths).size != 1:
        raise ValueError(f"{path}: day lengths vary; resample to a regular grid first")
    n = int(day_lengths[0])
    return ReturnSeries(1.0 / n, values, day_lengths.astype(np.int64))


def run_empirical(cfg: ExperimentConfig) -> ExperimentResult:
    """Full pipeline on an observed return panel.

    Emits the estimated spot-variance path, the occupation-distribution
    quantile table, GMM fits for all three families, and a bootstrap test
    of the best-fitting family.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    rs = load_return_series(cfg.input_path)
    path = estimate_spot_path(rs)
    redf = build_redf(path)
    T = rs.days

    spot_csv = os.path.join(cfg.out_dir, "empirical_spot_path.csv")
    _write_csv(spot_csv, path_frame(path))
    q = redf.quantile(np.asarray(cfg.alphas))
    quant_csv = os.path.join(cfg.out_dir, "empirical_quantiles.csv")
    _write_csv(quant_csv, pd.DataFrame({"alpha": cfg.alphas, "quantile": q}))

    targets = IvMomentTargets.from_series(daily_iv_series(rs))
    fits = {}
    for family in ("heston", "expou", "tsou"):
        try:
            fit = gmm_fit(targets, family, seed=cfg.seed)
            fits[family] = {
                "params": fit.params,
                "objective": fit.objective,
                "projected": fit.projected,
            }
        except Exception as exc:
            fits[family] = {"error": f"{type(exc).__name__}: {exc}"}

    fitted = {f: v for f, v in fits.items() if "objective" in v}
    gof_block = None
    if fitted:
        best = min(fitted, key=lambda f: fitted[f]["objective"])
        best_fit = gmm_fit(targets, best, seed=cfg.seed)
        null_spec = best_fit.model_spec()
        null = model_null(null_spec)
        observed = {s: _statistic(redf, null, float(T), s) for s in cfg.stats}
        omega_hat = math.sqrt(max(float(np.median(
            np.clip(day_noise_variance(rs), 0.0, None))), 0.0))
        from .gof import bootstrap_estimated

        reports = {}
        for s in cfg.stats:
            rep = bootstrap_estimated(
                null_spec, omega_hat, T, rs.delta_n, s, cfg.B, cfg.seed,
                observed[s], jobs=cfg.jobs,
            )
            reports[s] = rep.to_dict()
        gof_block = {"family": best, "reports": reports}

    results = {
        "days": int(T),
        "delta_n": rs.delta_n,
        "fits": fits,
        "gof": gof_block,
        "mean_daily_iv": float(targets.mean),
    }
    summary_json = os.path.join(cfg.out_dir, "empirical_summary.json")
    _write_json(summary_json, _summary_payload(cfg, results, []))
    return ExperimentResult(cfg.kind, results, [spot_csv, quant_csv, summary_json], [])
