"""Raw tick ingestion and previous-tick alignment to an equidistant grid.

Observed prices arrive at irregular transaction times.  Everything downstream
works on log-prices sampled on a fixed grid of spacing ``delta_n`` (a fraction
of one trading day), so the first step is previous-tick interpolation: each
grid point carries the log of the last trade at or before it.  Days are kept
separate; no return or estimation window ever crosses an overnight gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "RawTicks",
    "TickSeries",
    "ReturnSeries",
    "read_ticks",
    "clean_ticks",
    "pretick",
    "pretick_days",
    "log_returns",
    "day_slices",
]


def day_slices(day_lengths: np.ndarray) -> list[slice]:
    """Slices into a concatenated per-day array given per-day lengths."""
    ends = np.cumsum(day_lengths)
    starts = ends - day_lengths
    return [slice(int(a), int(b)) for a, b in zip(starts, ends)]


@dataclass
class RawTicks:
    """One session of raw trades: seconds since session start, trade price."""

    times: np.ndarray
    prices: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.prices = np.asarray(self.prices, dtype=float)
        if self.times.shape != self.prices.shape or self.times.ndim != 1:
            raise ValueError("times and prices must be 1-d arrays of equal length")
        if self.times.size and np.any(np.diff(self.times) < 0):
            raise ValueError("tick timestamps must be nondecreasing")

    def __len__(self) -> int:
        return self.times.size


def read_ticks(path: str, session_start: str | float = 0.0) -> RawTicks:
    """Read a ``timestamp,price`` CSV into a :class:`RawTicks`.

    Timestamps are either plain seconds within the session (any real number)
    or ISO-8601 datetimes, in which case they are converted to seconds past
    ``session_start`` (an ISO time-of-day string such as ``"09:30:00"``).
    Unparseable rows and non-positive prices are rejected with the offending
    row index.
    """
    frame = pd.read_csv(path)
    cols = [c.strip().lower() for c in frame.columns]
    if "timestamp" not in cols or "price" not in cols:
        raise ValueError(f"{path}: expected columns timestamp,price, got {list(frame.columns)}")
    frame.columns = cols
    if len(frame) == 0:
        raise ValueError(f"{path}: empty tick file")

    raw_ts = frame["timestamp"]
    numeric = pd.to_numeric(raw_ts, errors="coerce")
    if numeric.notna().all():
        seconds = numeric.to_numpy(dtype=float)
    else:
        parsed = pd.to_datetime(raw_ts, errors="coerce", format="ISO8601")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            raise ValueError(f"{path}: unparseable timestamp at row {int(bad[0])}")
        day0 = parsed.dt.normalize()
        offset = pd.to_timedelta(str(session_start)) if not isinstance(session_start, (int, float)) else pd.to_timedelta(session_start, unit="s")
        seconds = ((parsed - day0) - offset).dt.total_seconds().to_numpy(dtype=float)

    prices = pd.to_numeric(frame["price"], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(prices))
    if bad.size:
        raise ValueError(f"{path}: unparseable price at row {int(bad[0])}")
    bad = np.flatnonzero(prices <= 0.0)
    if bad.size:
        raise ValueError(f"{path}: non-positive price at row {int(bad[0])}")
    order = np.argsort(seconds, kind="stable")
    return RawTicks(seconds[order], prices[order])


def clean_ticks(raw: RawTicks, window: int = 50, nsd: float = 10.0) -> tuple[RawTicks, int]:
    """Drop non-positive prices and gross outliers.

    A tick is an outlier when it deviates more than ``nsd`` standard
    deviations from a ``window``-tick rolling median.  The standard deviation
    is estimated robustly (1.4826 times the rolling median absolute
    deviation) so a spike cannot inflate the scale enough to mask itself.
    Returns the cleaned ticks and the number of rows dropped.
    """
    keep = raw.prices > 0.0
    p = pd.Series(raw.prices)
    med = p.rolling(window, center=True, min_periods=1).median().to_numpy()
    dev = np.abs(raw.prices - med)
    mad = pd.Series(dev).rolling(window, center=True, min_periods=1).median().to_numpy()
    sd = 1.4826 * mad
    with np.errstate(invalid="ignore"):
        keep &= (sd <= 0.0) | (dev <= nsd * sd)
    dropped = int((~keep).sum())
    return RawTicks(raw.times[keep], raw.prices[keep]), dropped


@dataclass
class TickSeries:
    """Log-prices on the equidistant grid, possibly spanning several days.

    ``values`` concatenates the per-day grids; day d has ``day_lengths[d]``
    grid points (n + 1 points bracket n returns).  ``delta_n`` is the grid
    spacing as a fraction of one full session (so a 10 second grid on a 6.5
    hour session gives delta_n = 1/2340).
    """

    t0: float
    delta_n: float
    values: np.ndarray
    day_lengths: np.ndarray
    effective_sample: np.ndarray = field(default=None)  # type: ignore[assignment]
    forward_filled_days: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.day_lengths = np.asarray(self.day_lengths, dtype=np.int64)
        if self.delta_n <= 0:
            raise ValueError("delta_n must be positive")
        if self.values.size != int(self.day_lengths.sum()):
            raise ValueError("day_lengths inconsistent with values")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("log-prices must be finite")
        if self.effective_sample is None:
            self.effective_sample = np.ones(len(self.day_lengths))

    @property
    def days(self) -> int:
        return len(self.day_lengths)

    def day_values(self, d: int) -> np.ndarray:
        return self.values[day_slices(self.day_lengths)[d]]


@dataclass
class ReturnSeries:
    """Per-day first differences of gridded log-prices.

    Increments never span a day boundary; day d contributes
    ``day_lengths[d]`` returns.
    """

    delta_n: float
    values: np.ndarray
    day_lengths: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.day_lengths = np.asarray(self.day_lengths, dtype=np.int64)
        if self.values.size != int(self.day_lengths.sum()):
            raise ValueError("day_lengths inconsistent with values")

    @property
    def days(self) -> int:
        return len(self.day_lengths)

    def day_values(self, d: int) -> np.ndarray:
        return self.values[day_slices(self.day_lengths)[d]]

    def iter_days(self):
        for sl in day_slices(self.day_lengths):
            yield self.values[sl]


def pretick(
    raw: RawTicks,
    delta_n: float,
    session_bounds: tuple[float, float],
    unit_seconds: float | None = None,
) -> TickSeries:
    """Previous-tick interpolation of one session onto the grid.

    Grid point i sits at ``start + i * delta_n * unit_seconds`` and carries
    the log of the last trade at or before it.  ``unit_seconds`` is the
    length of one full trading session (the time unit delta_n refers to) and
    defaults to the given session span, so a short session keeps the same
    grid spacing but fewer points.  When no tick exists at or before the
    session start, leading grid points are filled forward from the first
    available tick and the day is flagged.

    The effective-sample fraction is the share of grid points whose selected
    tick is new, i.e. differs from the tick used at the previous grid point.
    """
    if len(raw) == 0:
        raise ValueError("empty tick series")
    if np.any(raw.prices <= 0.0):
        bad = int(np.flatnonzero(raw.prices <= 0.0)[0])
        raise ValueError(f"non-positive price at row {bad}")
    start, end = session_bounds
    if not end > start:
        raise ValueError("session_bounds must satisfy end > start")
    if unit_seconds is None:
        unit_seconds = end - start
    spacing = delta_n * unit_seconds
    n = round((end - start) / spacing)
    if n < 1 or not math.isclose(n * spacing, end - start, rel_tol=1e-9, abs_tol=1e-6):
        raise ValueError("session span must be a whole number of grid intervals")
    grid = start + np.arange(n + 1) * spacing

    # index of last tick at or before each grid time; -1 where none exists
    idx = np.searchsorted(raw.times, grid, side="right") - 1
    filled = bool(idx[0] < 0)
    logp = np.log(raw.prices[np.maximum(idx, 0)])

    new_tick = np.empty(n + 1, dtype=bool)
    new_tick[0] = idx[0] >= 0
    new_tick[1:] = idx[1:] != idx[:-1]
    eff = max(int(new_tick.sum()), 1) / (n + 1)

    return TickSeries(
        t0=start,
        delta_n=delta_n,
        values=logp,
        day_lengths=np.array([n + 1]),
        effective_sample=np.array([eff]),
        forward_filled_days=[0] if filled else [],
    )


def pretick_days(
    raws: list[RawTicks],
    delta_n: float,
    session_bounds: tuple[float, float],
    unit_seconds: float | None = None,
) -> TickSeries:
    """Stack per-day :func:`pretick` results into one multi-day series."""
    if not raws:
        raise ValueError("no sessions given")
    parts = [pretick(r, delta_n, session_bounds, unit_seconds) for r in raws]
    values = np.concatenate([p.values for p in parts])
    lengths = np.concatenate([p.day_lengths for p in parts])
    eff = np.concatenate([p.effective_sample for p in parts])
    flagged = [d for d, p in enumerate(parts) if p.forward_filled_days]
    return TickSeries(parts[0].t0, delta_n, values, lengths, eff, flagged)


def log_returns(ticks: TickSeries) -> ReturnSeries:
    """Per-day first differences; a two-day series yields no overnight return."""
    if np.any(ticks.day_lengths < 2):
        raise ValueError("each day needs at least 2 grid points")
    diffs = [np.diff(ticks.values[sl]) for sl in day_slices(ticks.day_lengths)]
    return ReturnSeries(
        delta_n=ticks.delta_n,
        values=np.concatenate(diffs),
        day_lengths=ticks.day_lengths - 1,
    )
