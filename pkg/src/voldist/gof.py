"""Distance statistics between occupation-time CDFs and null marginals.

The realized distribution function is a step function, so both the KS
distance and the weighted L2 distances admit exact evaluation: the sup is
attained at an atom from one of its two sides, and under the change of
variables u = F0(x) the L2 integrand is piecewise quadratic in u between
atom images.  Critical values come from bootstrap simulation of the null
model, either on the true volatility path (parameters fixed) or through the
full noisy-return estimation pipeline (parameters re-estimated per
replicate).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .calib import IvMomentTargets, daily_iv_series, gmm_fit
from .marginals import stationary_marginal
from .parallel import indexed_map, replicate_seeds
from .redf import Redf, build_redf
from .sim import SvModelSpec, simulate_expou, simulate_heston, simulate_tsou
from .spotvol import SpotVariancePath, estimate_spot_path
from .ticks import ReturnSeries

__all__ = [
    "GofReport",
    "rks",
    "rl2",
    "pvalue",
    "model_null",
    "bootstrap_known",
    "bootstrap_estimated",
    "GmmEstimator",
]

STAT_KINDS = ("rks", "cvm", "ad")


def rks(redf: Redf, null, T: float) -> float:
    """Scaled Kolmogorov-Smirnov distance sqrt(T) sup |F_nT - F0|.

    The null CDF is continuous, so the sup over all x is attained at an
    atom of the step function, approached from the left or the right; both
    sides of every atom are checked, making the sup exact.
    """
    f_right = redf.cum_counts / redf.n_cells
    f_left = np.concatenate(([0.0], f_right[:-1]))
    f0 = np.clip(np.asarray(null.cdf(redf.support), dtype=float), 0.0, 1.0)
    gap = max(np.max(np.abs(f_right - f0)), np.max(np.abs(f_left - f0)))
    return math.sqrt(T) * float(gap)


def _segments(redf: Redf, null):
    """Knots in u = F0(x) space and the step height on each gap."""
    u = np.clip(np.asarray(null.cdf(redf.support), dtype=float), 0.0, 1.0)
    u = np.maximum.accumulate(u)  # guard monotonicity against cdf rounding
    knots = np.concatenate(([0.0], u, [1.0]))
    heights = np.concatenate(([0.0], redf.cum_counts / redf.n_cells))
    return knots, heights


def rl2(redf: Redf, null, T: float, weight_kind: str = "cvm") -> float:
    """Weighted L2 distance T int (F_nT - F0)^2 w dF0, integrated exactly.

    With u = F0(x) the integrand between consecutive atom images is
    (h - u)^2 times the weight, which integrates in closed form for both
    the unweighted (Cramer-von-Mises) and 1/(u(1-u)) (Anderson-Darling)
    kinds.  The AD weight diverges if an atom maps to u in {0, 1}; the
    integration domain is then clipped to [1e-10, 1 - 1e-10] and a
    RuntimeWarning is emitted.
    """
    knots, h = _segments(redf, null)
    if weight_kind == "cvm":
        a, b = knots[:-1], knots[1:]
        total = float(np.sum(((h - a) ** 3 - (h - b) ** 3) / 3.0))
    elif weight_kind == "ad":
        eps = 1e-10
        inner = knots[1:-1]
        if np.any((inner < eps) | (inner > 1.0 - eps)):
            warnings.warn(
                "atom at the boundary of the null support; AD weight clipped",
                RuntimeWarning,
                stacklevel=2,
            )
        kc = np.clip(knots, eps, 1.0 - eps)
        a, b = kc[:-1], kc[1:]
        total = float(np.sum(_ad_antiderivative(b, h) - _ad_antiderivative(a, h)))
    else:
        raise ValueError(f"unknown weight kind {weight_kind!r}")
    return float(T) * total


def _ad_antiderivative(u, h):
    # int (h-u)^2 (1/u + 1/(1-u)) du, valid for u strictly inside (0, 1)
    return (
        h * h * np.log(u)
        - 2.0 * h * u
        + 0.5 * u * u
        - (1.0 - h) ** 2 * np.log1p(-u)
        + 2.0 * (1.0 - h) * (1.0 - u)
        - 0.5 * (1.0 - u) ** 2
    )


def _statistic(redf: Redf, null, T: float, kind: str) -> float:
    if kind == "rks":
        return rks(redf, null, T)
    return rl2(redf, null, T, weight_kind=kind)


def pvalue(observed: float, replicates) -> float:
    """Bootstrap p-value (1 + #{replicate >= observed}) / (B + 1)."""
    reps = np.asarray(replicates, dtype=float)
    if reps.size == 0:
        raise ValueError("need at least one bootstrap replicate")
    return float((1 + np.count_nonzero(reps >= observed)) / (reps.size + 1))


def model_null(spec: SvModelSpec):
    """Stationary marginal law implied by a model specification."""
    if spec.family == "tsou":
        return stationary_marginal("tsou", (spec.kappa, spec.c, spec.lam))
    return stationary_marginal(spec.family, (spec.kappa, spec.v0, spec.xi))


@dataclass(frozen=True)
class GofReport:
    """One bootstrap test: observed statistic, replicates, critical values."""

    stat_kind: str
    observed: float
    replicates: np.ndarray
    critical_values: dict[float, float]
    p_value: float
    B: int
    seed: int
    provenance: str
    dropped: int = 0
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            "stat_kind": self.stat_kind,
            "observed": self.observed,
            "replicates": [float(r) for r in self.replicates],
            "critical_values": {f"{k:.2f}": float(v) for k, v in self.critical_values.items()},
            "p_value": self.p_value,
            "B": self.B,
            "seed": self.seed,
            "provenance": self.provenance,
            "dropped": self.dropped,
            "flagged": self.flagged,
        }


def _simulate_variance(spec: SvModelSpec, T: int, steps_per_day: int, seed) -> np.ndarray:
    if spec.family == "heston":
        return simulate_heston(spec, T, steps_per_day, seed)[0]
    if spec.family == "expou":
        return simulate_expou(spec, T, steps_per_day, seed)[0]
    return simulate_tsou(spec, T, steps_per_day, seed)


def _true_path_redf(spec: SvModelSpec, T: int, n: int, seed) -> Redf:
    v = _simulate_variance(spec, T, n, seed)
    path = SpotVariancePath(1.0 / n, v[:-1], np.full(T, n))
    return build_redf(path)


def _known_replicate(args) -> float:
    b, spec, T, n, kind, null, seed = args
    try:
        redf = _true_path_redf(spec, T, n, seed)
        return _statistic(redf, null, float(T), kind)
    except Exception as exc:
        raise RuntimeError(f"replicate {b} failed: {exc}") from exc


def _report(kind, observed, reps, B, seed, provenance, dropped=0, flagged=False):
    crit = {
        0.10: float(np.quantile(reps, 0.90)),
        0.05: float(np.quantile(reps, 0.95)),
        0.01: float(np.quantile(reps, 0.99)),
    }
    return GofReport(
        stat_kind=kind,
        observed=float(observed),
        replicates=reps,
        critical_values=crit,
        p_value=pvalue(observed, reps),
        B=B,
        seed=seed,
        provenance=provenance,
        dropped=dropped,
        flagged=flagged,
    )


def bootstrap_known(
    model: SvModelSpec,
    T: int,
    delta_n: float,
    stat_kind: str,
    B: int,
    seed: int,
    observed: float,
    *,
    null=None,
    jobs: int = 1,
) -> GofReport:
    """Critical values with the model parameters held fixed.

    Each replicate simulates the volatility path itself on the delta_n
    grid, builds its occupation-time CDF directly (no noise, no spot
    estimation), and measures the distance to the null marginal.  Cheap by
    construction; the estimation error of the observed statistic is not
    reflected in the replicates.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if stat_kind not in STAT_KINDS:
        raise ValueError(f"unknown statistic kind {stat_kind!r}")
    n = round(1.0 / delta_n)
    if null is None:
        null = model_null(model)
    seeds = replicate_seeds(seed, B)
    args = [(b, model, T, n, stat_kind, null, seeds[b]) for b in range(B)]
    reps = np.array(indexed_map(_known_replicate, args, jobs=jobs))
    return _report(stat_kind, observed, reps, B, seed, "fixed")


@dataclass(frozen=True)
class GmmEstimator:
    """Default re-estimation hook: daily IV moments, then a GMM fit.

    ``options`` is forwarded to the Nelder-Mead polisher; replicate fits
    tolerate looser tolerances than a headline calibration because the
    bootstrap statistic only needs the re-fitted null, not machine-precision
    parameters.
    """

    family: str
    restarts: int = 3
    options: dict | None = None

    def __call__(self, rs: ReturnSeries):
        targets = IvMomentTargets.from_series(daily_iv_series(rs))
        return gmm_fit(targets, self.family, restarts=self.restarts,
                       options=self.options)


def _estimated_replicate(args):
    b, spec, omega_hat, T, n, kind, hook = args[:7]
    seed = args[7]
    delta_n = 1.0 / n
    s_vol, s_price, s_noise = seed.spawn(3)
    v = _simulate_variance(spec, T, n, s_vol)
    sigma = np.sqrt(np.maximum(v[:-1], 0.0))
    phi1 = np.random.default_rng(s_price).standard_normal(T * n)
    phi2 = np.random.default_rng(s_noise).standard_normal(T * n)
    r = sigma * math.sqrt(delta_n) * phi1 + omega_hat * phi2
    rs = ReturnSeries(delta_n, r, np.full(T, n))
    try:
        path = estimate_spot_path(rs)
        redf = build_redf(path)
        fitted = hook(rs)
        refit = fitted.model_spec() if hasattr(fitted, "model_spec") else fitted
        return _statistic(redf, model_null(refit), float(T), kind)
    except Exception:
        return None


def bootstrap_estimated(
    model: SvModelSpec,
    omega_hat: float,
    T: int,
    delta_n: float,
    stat_kind: str,
    B: int,
    seed: int,
    observed: float,
    *,
    estimator_hook=None,
    jobs: int = 1,
) -> GofReport:
    """Critical values absorbing noise and re-estimation error.

    Each replicate simulates volatility under the fitted parameters, builds
    noisy returns as sigma sqrt(delta_n) Phi1 + omega_hat Phi2 with iid
    standard normal pairs and the single scalar noise level, runs the full
    spot-variance and distribution pipeline, re-fits the model on the
    replicate's own daily IV series, and measures the distance to the
    re-fitted null.  Replicates whose re-estimation fails are dropped and
    counted; the report is flagged when more than 5% drop.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if stat_kind not in STAT_KINDS:
        raise ValueError(f"unknown statistic kind {stat_kind!r}")
    if omega_hat < 0.0:
        raise ValueError("omega_hat must be nonnegative")
    n = round(1.0 / delta_n)
    if estimator_hook is None:
        estimator_hook = GmmEstimator(model.family)
    seeds = replicate_seeds(seed, B)
    args = [
        (b, model, float(omega_hat), T, n, stat_kind, estimator_hook, seeds[b])
        for b in range(B)
    ]
    out = indexed_map(_estimated_replicate, args, jobs=jobs)
    reps = np.array([s for s in out if s is not None])
    dropped = B - reps.size
    if reps.size == 0:
        raise RuntimeError("every replicate failed re-estimation")
    return _report(
        stat_kind, observed, reps, B, seed, "estimated",
        dropped=dropped, flagged=dropped > 0.05 * B,
    )
