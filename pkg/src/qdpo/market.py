"""Price ingestion and the per-period tensors consumed by the QUBO builder.

Rebalance dates are laid out either every ``delta_t`` calendar days from the
first date of the series (mapped back to the most recent trading day) or every
``delta_t`` rows of the trading calendar.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import (
    CalendarMismatch,
    InsufficientHistory,
    MissingTicker,
    NonPositivePrice,
    WindowTooShort,
)

CALENDAR = "calendar"
TRADING = "trading"


@dataclass(frozen=True)
class PriceSeries:
    """Closing prices on a shared, strictly increasing date axis.

    ``closes`` has shape (n_days, n_assets).
    """

    tickers: tuple
    dates: np.ndarray
    closes: np.ndarray

    def __post_init__(self):
        closes = np.asarray(self.closes, dtype=float)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        if closes.ndim != 2 or closes.shape != (len(dates), len(self.tickers)):
            raise ValueError("closes must have shape (n_dates, n_tickers)")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0):
            raise NonPositivePrice("every price must be finite and strictly positive")
        if len(dates) > 1 and np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise ValueError("dates must be strictly increasing")
        closes.setflags(write=False)
        dates.setflags(write=False)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tuple(self.tickers))

    @property
    def n_assets(self):
        return len(self.tickers)

    def scaled(self, factor):
        return PriceSeries(self.tickers, self.dates, self.closes * factor)


@dataclass(frozen=True)
class MarketTensors:
    mu: np.ndarray  # (n_t, n_a) rebalance-period log returns
    sigma: np.ndarray  # (n_t, n_a, n_a) daily-return covariance per window
    phi: np.ndarray  # (n_t, n_a) growth-adjusted price ratio
    growth_factor: float
    delta_t: int
    n_t: int
    rebalance_dates: tuple = ()

    @property
    def n_a(self):
        return self.mu.shape[1]

    def to_dict(self):
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "phi": self.phi.tolist(),
            "growth_factor": self.growth_factor,
            "delta_t": self.delta_t,
            "n_t": self.n_t,
            "rebalance_dates": list(self.rebalance_dates),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mu=np.asarray(d["mu"], dtype=float),
            sigma=np.asarray(d["sigma"], dtype=float),
            phi=np.asarray(d["phi"], dtype=float),
            growth_factor=float(d["growth_factor"]),
            delta_t=int(d["delta_t"]),
            n_t=int(d["n_t"]),
            rebalance_dates=tuple(d.get("rebalance_dates", ())),
        )


def load_prices(path, tickers, align="strict"):
    """Read a ``date,ticker,close`` CSV into a :class:`PriceSeries`.

    With ``align="strict"`` an asset missing any date that another requested
    asset has raises :class:`CalendarMismatch`; ``align="intersect"`` keeps only
    the shared dates instead.
    """
    path = Path(path)
    df = pd.read_csv(path, dtype={"ticker": str}, encoding="utf-8")
    missing_cols = {"date", "ticker", "close"} - set(df.columns)
    if missing_cols:
        raise ValueError(f"{path}: missing columns {sorted(missing_cols)}")
    tickers = list(tickers)
    present = set(df["ticker"].unique())
    absent = [t for t in tickers if t not in present]
    if absent:
        raise MissingTicker(f"tickers not found in {path}: {absent}")

    df = df[df["ticker"].isin(tickers)].copy()
    df["close"] = df["close"].astype(float)
    bad = df[~(df["close"] > 0)]
    if len(bad):
        row = bad.iloc[0]
        raise NonPositivePrice(f"{row['ticker']} on {row['date']}: close={row['close']}")
    df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d")
    if df.duplicated(["date", "ticker"]).any():
        raise ValueError(f"{path}: duplicate (date, ticker) rows")

    wide = df.pivot(index="date", columns="ticker", values="close").sort_index()
    wide = wide[tickers]
    holes = wide.isna()
    if holes.values.any():
        if align != "intersect":
            t = holes.any(axis=0)
            who = [c for c in tickers if t[c]]
            first = wide.index[holes[who[0]].values][0].date()
            raise CalendarMismatch(f"{who[0]} missing {first} (and possibly more); affected: {who}")
        wide = wide.dropna()
    dates = wide.index.values.astype("datetime64[D]")
    return PriceSeries(tuple(tickers), dates, wide.to_numpy(dtype=float))


def rebalance_indices(ps, delta_t, n_t, calendar=CALENDAR):
    """Row indices of the n_t + 1 rebalance dates (the first is the start)."""
    if delta_t < 1 or n_t < 1:
        raise ValueError("delta_t and n_t must be positive")
    n_days = len(ps.dates)
    if calendar == TRADING:
        idx = np.arange(n_t + 1) * delta_t
        if idx[-1] >= n_days:
            raise InsufficientHistory(
                f"need {idx[-1] + 1} trading rows for {n_t} steps of {delta_t}, have {n_days}"
            )
        return idx
    if calendar != CALENDAR:
        raise ValueError(f"unknown calendar convention {calendar!r}")
    if n_days == 0:
        raise InsufficientHistory("empty price series")
    start = ps.dates[0]
    targets = start + np.arange(n_t + 1) * np.timedelta64(delta_t, "D")
    if targets[-1] > ps.dates[-1]:
        raise InsufficientHistory(
            f"last rebalance date {targets[-1]} is after the final price date {ps.dates[-1]}"
        )
    # most recent trading day on or before each target
    idx = np.searchsorted(ps.dates, targets, side="right") - 1
    if np.any(np.diff(idx) <= 0):
        raise InsufficientHistory("two rebalance dates map onto the same trading day")
    return idx


def rebalance_returns(ps, delta_t, n_t, calendar=CALENDAR):
    """Log return of each asset between consecutive rebalance dates, (n_t, n_a)."""
    idx = rebalance_indices(ps, delta_t, n_t, calendar)
    p = ps.closes[idx]
    return np.log(p[1:] / p[:-1])


def covariance_matrices(ps, delta_t, n_t, calendar=CALENDAR):
    """Sample covariance of daily log returns inside each rebalance window.

    Window t holds the daily returns strictly after rebalance t-1 up to and
    including rebalance t, so adjacent windows share only the price at their
    common endpoint. On a trading calendar each window holds exactly
    ``delta_t`` returns and the divisor is ``delta_t - 1``.
    """
    if delta_t < 2:
        raise WindowTooShort(f"delta_t={delta_t} leaves no degrees of freedom")
    idx = rebalance_indices(ps, delta_t, n_t, calendar)
    daily = np.log(ps.closes[1:] / ps.closes[:-1])  # row s-1 holds the return on day s
    out = np.empty((n_t, ps.n_assets, ps.n_assets))
    for t in range(n_t):
        window = daily[idx[t]: idx[t + 1]]
        if len(window) < 2:
            raise WindowTooShort(f"window {t} has {len(window)} daily returns")
        dev = window - window.mean(axis=0)
        cov = dev.T @ dev / (len(window) - 1)
        out[t] = 0.5 * (cov + cov.T)
    return out


def growth_factor(epsilon, delta_t):
    return float((1.0 + epsilon) ** (delta_t / 365.0))


def price_dynamics(ps, delta_t, n_t, epsilon, calendar=CALENDAR):
    """Return ``(phi, g)`` with ``phi[t, a] = P[t, a] / (g * P[t-1, a])``."""
    g = growth_factor(epsilon, delta_t)
    idx = rebalance_indices(ps, delta_t, n_t, calendar)
    p = ps.closes[idx]
    return p[1:] / (g * p[:-1]), g


def market_tensors(ps, delta_t, n_t, epsilon, calendar=CALENDAR):
    idx = rebalance_indices(ps, delta_t, n_t, calendar)
    phi, g = price_dynamics(ps, delta_t, n_t, epsilon, calendar)
    return MarketTensors(
        mu=rebalance_returns(ps, delta_t, n_t, calendar),
        sigma=covariance_matrices(ps, delta_t, n_t, calendar),
        phi=phi,
        growth_factor=g,
        delta_t=int(delta_t),
        n_t=int(n_t),
        rebalance_dates=tuple(str(d) for d in ps.dates[idx]),
    )
