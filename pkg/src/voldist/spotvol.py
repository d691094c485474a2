"""Overlapping-block spot variance and spot noise variance.

The local variance at grid time i*delta_n is estimated from a block of h_n
consecutive pre-averaged increments: a truncated sum of squared values,
rescaled, then debiased with a local noise-variance estimate taken from the
raw returns under the same block.  Estimates are piecewise constant on grid
cells and each day is extended to its close by holding the final computable
value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .preavg import (
    PreavgConfig,
    PreavgSeries,
    normal_quantile,
    preavg_bipower,
    preaverage,
    truncation_threshold,
)
from .ticks import ReturnSeries, day_slices

__all__ = [
    "BlockConfig",
    "BlockSeries",
    "SpotVariancePath",
    "raw_spot_variance",
    "noise_variance",
    "day_noise_variance",
    "flag_jump_windows",
    "debias",
    "extend_path",
    "diurnal_adjust",
    "estimate_spot_path",
    "path_frame",
]


@dataclass(frozen=True)
class BlockConfig:
    """Number of pre-averaged increments pooled into one local window."""

    h_n: int

    def __post_init__(self) -> None:
        if self.h_n < 2:
            raise ValueError("h_n must be at least 2")

    @classmethod
    def clock_span(cls, n: int, fraction: float = 1.5 / 6.5) -> "BlockConfig":
        """Window spanning a fixed fraction of the session (default 1.5 of 6.5 hours)."""
        if n < 1:
            raise ValueError("n must be positive")
        return cls(max(2, round(fraction * n)))

    @classmethod
    def rate_rule(cls, delta_n: float, const: float = 1.0) -> "BlockConfig":
        """Rate-optimal alternative h_n ~ delta_n^(-3/4)."""
        if delta_n <= 0:
            raise ValueError("delta_n must be positive")
        return cls(max(2, round(const * delta_n**-0.75)))

    def validate(self, k_n: int, n_day: int | None = None) -> None:
        # h_n/k_n must be large for the local window to average out noise
        if self.h_n < 4 * k_n:
            raise ValueError(f"h_n = {self.h_n} must be at least 4*k_n = {4 * k_n}")
        if n_day is not None and self.h_n > n_day:
            raise ValueError(f"h_n = {self.h_n} exceeds the session length {n_day}")


@dataclass
class BlockSeries:
    """Per-block estimates, concatenated across days.

    Day d holds ``day_lengths[d]`` block positions, one per grid index
    i = 0 .. n_d - h_n - k_n + 1, where n_d = ``day_cells[d]`` is the day's
    return count.  ``truncated`` optionally counts zeroed increments per
    block; ``negative_count`` is set by :func:`debias`.
    """

    delta_n: float
    values: np.ndarray
    day_lengths: np.ndarray
    day_cells: np.ndarray
    truncated: np.ndarray | None = None
    negative_count: int | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.day_lengths = np.asarray(self.day_lengths, dtype=np.int64)
        self.day_cells = np.asarray(self.day_cells, dtype=np.int64)
        if self.values.size != int(self.day_lengths.sum()):
            raise ValueError("day_lengths inconsistent with values")
        if len(self.day_lengths) != len(self.day_cells):
            raise ValueError("day_cells inconsistent with day_lengths")

    @property
    def days(self) -> int:
        return len(self.day_lengths)

    def day_values(self, d: int) -> np.ndarray:
        return self.values[day_slices(self.day_lengths)[d]]


def raw_spot_variance(pre: PreavgSeries, v_n, cfg: BlockConfig) -> BlockSeries:
    """Truncated overlapping-block sums of squared pre-averaged increments.

    For each day and each i = 0 .. n - h_n - k_n + 1,

        v_tilde_i = (1/(h_n sqrt(delta_n))) sum_{m=0}^{h_n-1}
                    Zbar_{i+m}^2 1{|Zbar_{i+m}| <= v_n}

    computed by a sliding cumulative sum, O(1) per position.  ``v_n`` is a
    scalar, one threshold per day, or one per pre-averaged increment (an
    array matching ``pre.values``); infinity disables truncation.
    """
    h = cfg.h_n
    k = pre.k_n
    cfg.validate(k)
    v_arr = np.asarray(v_n, dtype=float)
    per_increment = v_arr.shape == pre.values.shape and v_arr.ndim == 1
    if not per_increment:
        v_arr = np.broadcast_to(v_arr, (pre.days,))
    scale = 1.0 / (h * math.sqrt(pre.delta_n))

    vals, trunc, lengths, cells = [], [], [], []
    for d, sl in enumerate(day_slices(pre.day_lengths)):
        z = pre.values[sl]
        if z.size == 0:
            lengths.append(0)
            cells.append(0)
            continue
        n_d = z.size + k - 2
        blocks = n_d - h - k + 2
        if blocks < 1:
            raise ValueError(
                f"day {d}: {n_d} returns cannot fill one block of h_n + k_n - 1 = {h + k - 1}")
        keep = np.abs(z) <= (v_arr[sl] if per_increment else v_arr[d])
        w = np.where(keep, z * z, 0.0)
        c = np.concatenate(([0.0], np.cumsum(w)))
        vals.append((c[h:h + blocks] - c[:blocks]) * scale)
        ct = np.concatenate(([0], np.cumsum(~keep)))
        trunc.append(ct[h:h + blocks] - ct[:blocks])
        lengths.append(blocks)
        cells.append(n_d)

    return BlockSeries(
        delta_n=pre.delta_n,
        values=np.concatenate(vals) if vals else np.empty(0),
        day_lengths=np.array(lengths),
        day_cells=np.array(cells),
        truncated=np.concatenate(trunc) if trunc else np.empty(0, dtype=np.int64),
    )


def noise_variance(returns: ReturnSeries, cfg: BlockConfig, k_n: int) -> BlockSeries:
    """Local noise variance: negative mean of adjacent-return products.

    The block at grid index i covers the h_n + k_n raw returns feeding the
    pre-averaged increments of the matching spot-variance block.  Blocks cut
    off by the end of a day average over the products actually available, so
    the output aligns one-to-one with :func:`raw_spot_variance`.
    """
    h = cfg.h_n
    L = h + k_n
    vals, lengths, cells = [], [], []
    for d, sl in enumerate(day_slices(returns.day_lengths)):
        r = returns.values[sl]
        n_d = r.size
        if n_d < k_n:
            lengths.append(0)
            cells.append(0)
            continue
        blocks = n_d - h - k_n + 2
        if blocks < 1:
            raise ValueError(
                f"day {d}: {n_d} returns cannot fill one block of h_n + k_n - 1 = {L - 1}")
        prod = r[:-1] * r[1:]
        c = np.concatenate(([0.0], np.cumsum(prod)))
        starts = np.arange(blocks)
        stops = np.minimum(starts + L - 1, n_d - 1)
        vals.append(-(c[stops] - c[starts]) / (stops - starts))
        lengths.append(blocks)
        cells.append(n_d)

    return BlockSeries(
        delta_n=returns.delta_n,
        values=np.concatenate(vals) if vals else np.empty(0),
        day_lengths=np.array(lengths),
        day_cells=np.array(cells),
    )


def day_noise_variance(returns: ReturnSeries) -> np.ndarray:
    """Whole-day noise variance, one value per day.

    The negative mean of all adjacent-return products in the day.  Without
    microstructure noise the estimate hovers near zero and can come out
    slightly negative; callers that need a variance should clip at zero.
    """
    out = np.empty(returns.days)
    for d, sl in enumerate(day_slices(returns.day_lengths)):
        r = returns.values[sl]
        if r.size < 2:
            raise ValueError(f"day {d}: need at least 2 returns")
        out[d] = -np.mean(r[:-1] * r[1:])
    return out


def flag_jump_windows(returns: ReturnSeries, k_n: int, u_day) -> np.ndarray:
    """Mark pre-averaged windows that overlap a raw return exceeding u_day.

    A pre-averaged increment mixes k_n - 1 consecutive raw returns with
    kernel weights no larger than g's peak, so a jump passes into it shrunk
    by the weight: an |Zbar| cutoff catches the peak windows but keeps the
    low-weight flanks, which still carry most of the jump's squared
    contribution.  Flagging the raw return instead and dropping every window
    it feeds removes the whole neighborhood.  The output is a boolean mask
    aligned with the pre-averaged values of :func:`preaverage` (days shorter
    than k_n contribute nothing).
    """
    u = np.broadcast_to(np.asarray(u_day, dtype=float), (returns.days,))
    masks = []
    for d, sl in enumerate(day_slices(returns.day_lengths)):
        r = returns.values[sl]
        if r.size < k_n:
            continue
        flagged = np.abs(r) >= u[d]
        # window i spans returns i .. i+k_n-2; dead iff any of them is flagged
        c = np.concatenate(([0], np.cumsum(flagged)))
        masks.append((c[k_n - 1:] - c[:r.size - k_n + 2]) > 0)
    return np.concatenate(masks) if masks else np.empty(0, dtype=bool)


def debias(v_tilde: BlockSeries, omega2_hat: BlockSeries, cfg: PreavgConfig) -> BlockSeries:
    """Remove pre-averaging scale and noise bias from raw block sums.

        V_hat = v_tilde/(theta_n psi2_n) - (psi1_n/(theta_n^2 psi2_n)) omega2_hat

    With the finite-sample constants this inverts the exact block mean under
    constant volatility and i.i.d. noise.  The subtraction can push single
    blocks below zero; values are kept as-is and the count is recorded.
    """
    if v_tilde.values.size != omega2_hat.values.size or not np.array_equal(
            v_tilde.day_lengths, omega2_hat.day_lengths):
        raise ValueError("v_tilde and omega2_hat are not aligned")
    th = cfg.theta_n(v_tilde.delta_n)
    v_hat = v_tilde.values / (th * cfg.psi2_n) \
        - (cfg.psi1_n / (th**2 * cfg.psi2_n)) * omega2_hat.values
    return BlockSeries(
        delta_n=v_tilde.delta_n,
        values=v_hat,
        day_lengths=v_tilde.day_lengths.copy(),
        day_cells=v_tilde.day_cells.copy(),
        truncated=None if v_tilde.truncated is None else v_tilde.truncated.copy(),
        negative_count=int((v_hat < 0.0).sum()),
    )


@dataclass
class SpotVariancePath:
    """Piecewise-constant spot variance on grid cells, all days concatenated.

    Cell i of a day covers [i*delta_n, (i+1)*delta_n) in units of one full
    session; a day contributes ``day_lengths[d]`` cells.  Values beyond the
    last computable block of a day repeat that block's estimate.
    """

    delta_n: float
    v_hat: np.ndarray
    day_lengths: np.ndarray
    v_tilde: np.ndarray | None = None
    omega2_hat: np.ndarray | None = None
    truncated: np.ndarray | None = None
    negative_count: int = 0
    diurnal_factor: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.v_hat = np.asarray(self.v_hat, dtype=float)
        self.day_lengths = np.asarray(self.day_lengths, dtype=np.int64)
        if self.v_hat.size != int(self.day_lengths.sum()):
            raise ValueError("day_lengths inconsistent with v_hat")
        if self.v_hat.size == 0:
            raise ValueError("empty path")

    @property
    def days(self) -> int:
        return len(self.day_lengths)

    @property
    def total_time(self) -> float:
        """Elapsed estimation time T: cell count times delta_n, gaps ignored."""
        return self.v_hat.size * self.delta_n

    def day_values(self, d: int) -> np.ndarray:
        return self.v_hat[day_slices(self.day_lengths)[d]]

    def value(self, t):
        """Path value at time t in [0, T]; cadlag steps, t = T hits the last cell."""
        t_arr = np.asarray(t, dtype=float)
        if np.any((t_arr < 0) | (t_arr > self.total_time * (1 + 1e-12))):
            raise ValueError("query time outside [0, T]")
        idx = np.minimum(np.floor(t_arr / self.delta_n).astype(np.int64),
                         self.v_hat.size - 1)
        out = self.v_hat[idx]
        return float(out) if t_arr.ndim == 0 else out


def _extend(values: np.ndarray, day_lengths, day_cells) -> np.ndarray:
    parts = []
    for sl, cells in zip(day_slices(day_lengths), day_cells):
        v = values[sl]
        if v.size == 0:
            continue
        parts.append(np.concatenate((v, np.full(int(cells) - v.size, v[-1], dtype=v.dtype))))
    return np.concatenate(parts)


def extend_path(
    v_hat: BlockSeries,
    v_tilde: BlockSeries | None = None,
    omega2_hat: BlockSeries | None = None,
) -> SpotVariancePath:
    """Hold each day's final block estimate through the end of that day."""
    if v_hat.values.size == 0:
        raise ValueError("no block estimates to extend")
    keep = v_hat.day_lengths > 0
    return SpotVariancePath(
        delta_n=v_hat.delta_n,
        v_hat=_extend(v_hat.values, v_hat.day_lengths, v_hat.day_cells),
        day_lengths=v_hat.day_cells[keep],
        v_tilde=None if v_tilde is None else _extend(
            v_tilde.values, v_tilde.day_lengths, v_tilde.day_cells),
        omega2_hat=None if omega2_hat is None else _extend(
            omega2_hat.values, omega2_hat.day_lengths, omega2_hat.day_cells),
        truncated=None if v_hat.truncated is None else _extend(
            v_hat.truncated, v_hat.day_lengths, v_hat.day_cells),
        negative_count=v_hat.negative_count or 0,
    )


def diurnal_adjust(path: SpotVariancePath) -> SpotVariancePath:
    """Estimate the intraday profile and divide it out of the path.

    The factor d(tau) at intraday cell tau is the cross-day average of the
    spot variance there, normalized to sum to one over the day; the adjusted
    value is V_hat/(n d(tau)).  Only days of full (maximal) length enter the
    average; shorter days are still adjusted on their leading cells.
    """
    if path.days < 2:
        raise ValueError("diurnal adjustment needs at least 2 days")
    n = int(path.day_lengths.max())
    full = [d for d in range(path.days) if path.day_lengths[d] == n]
    profile = np.zeros(n)
    for d in full:
        profile += path.day_values(d)
    profile /= len(full)
    total = profile.sum()
    if not total > 0:
        raise ValueError("cannot normalize a nonpositive intraday profile")
    factor = profile / total

    slices = day_slices(path.day_lengths)
    adjusted = np.empty_like(path.v_hat)
    for d, sl in enumerate(slices):
        m = int(path.day_lengths[d])
        adjusted[sl] = path.v_hat[sl] / (n * factor[:m])
    return replace(path, v_hat=adjusted, diurnal_factor=factor)


def estimate_spot_path(
    returns: ReturnSeries,
    cfg: PreavgConfig | None = None,
    block: BlockConfig | None = None,
    *,
    alpha_q: float = 0.001,
    omega_bar: float = 0.20,
    truncate: bool = True,
) -> SpotVariancePath:
    """Full spot-variance pipeline from gridded returns.

    Pre-averages each day, truncates jumps in two stages (windows overlapping
    a flagged raw return are dropped whole, then surviving pre-averaged
    increments are cut at a bipower-scaled level), forms overlapping block
    sums and local noise estimates, debiases, and extends each day to its
    close.
    """
    if cfg is None:
        cfg = PreavgConfig.from_delta(returns.delta_n)
    if block is None:
        block = BlockConfig.clock_span(round(1.0 / returns.delta_n))
    dn = returns.delta_n
    pre = preaverage(returns, cfg)
    if truncate:
        omega2_day = np.clip(day_noise_variance(returns), 0.0, None)
        iv = preavg_bipower(pre, cfg, omega2_day)
        # Both cutoffs sit q_{1-alpha} local standard deviations out, times
        # the slowly diverging factor delta^(omega_bar - 1/4) that makes
        # false truncation vanish asymptotically.  The |Zbar| cutoff needs
        # the modulus of the pre-averaged increments, theta_n*psi2_n*IV per
        # unit sqrt(delta_n); feeding the raw daily IV instead would put it
        # at ~27 sds and let all but the largest jumps through.
        modulus = cfg.theta_n(dn) * cfg.psi2_n * iv.values
        v_day = truncation_threshold(modulus, dn, alpha_q, omega_bar)
        u_day = normal_quantile(1.0 - alpha_q) \
            * np.sqrt(iv.values * dn + 2.0 * omega2_day) * dn ** (omega_bar - 0.25)
        dead = flag_jump_windows(returns, cfg.k_n, u_day)
        v_n = np.where(dead, -1.0, np.repeat(v_day, pre.day_lengths))
    else:
        v_n = np.inf
    v_tilde = raw_spot_variance(pre, v_n, block)
    omega2 = noise_variance(returns, block, cfg.k_n)
    v_hat = debias(v_tilde, omega2, cfg)
    return extend_path(v_hat, v_tilde, omega2)


def path_frame(path: SpotVariancePath):
    """Tidy per-cell table (day, i, v_hat, omega2_hat, truncated) for export."""
    import pandas as pd

    day = np.repeat(np.arange(path.days), path.day_lengths)
    i = np.concatenate([np.arange(m) for m in path.day_lengths])
    cols = {"day": day, "i": i, "v_hat": path.v_hat}
    if path.omega2_hat is not None:
        cols["omega2_hat"] = path.omega2_hat
    if path.truncated is not None:
        cols["truncated"] = path.truncated
    return pd.DataFrame(cols)
