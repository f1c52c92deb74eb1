"""Weight normalization, financial scores and the ideal efficient frontier."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import InfeasibleBounds, NotNormalized, SolverStall, ZeroFreeMass
from .model import Strategy, objective_terms

ANNUAL_MARR = 0.2204
DEFAULT_RFR = 0.0172


def _check_bounds(m, b):
    m = np.asarray(m, dtype=float)
    b = np.asarray(b, dtype=float)
    if m.shape != b.shape or np.any(m > b):
        raise InfeasibleBounds("need m_a <= b_a elementwise")
    if m.sum() > 1 + 1e-12 or b.sum() < 1 - 1e-12:
        raise InfeasibleBounds(f"sum(m)={m.sum():.6g}, sum(b)={b.sum():.6g} cannot reach 1")
    return m, b


def normalize_weights(w, m, b, tol=1e-12, return_iterations=False):
    """Iterative proportional adjustment onto ``sum(w) = 1, m <= w <= b``.

    Clip to bounds and fix the clipped assets, rescale the free ones by
    ``(1 - S_G) / S_U``, fix any that now leave their bounds, repeat. If no
    free mass is left to rescale (every asset fixed, or the free ones all at
    zero) the remaining residual is spread over all assets in proportion to
    their room to the bound it pushes toward, which lands exactly on the
    feasible set.
    """
    m, b = _check_bounds(m, b)
    w = np.array(w, dtype=float)
    if w.shape != m.shape:
        raise ValueError("weights and bounds must have the same length")
    if np.all(w >= m) and np.all(w <= b) and abs(w.sum() - 1.0) <= tol:
        return (w, 0) if return_iterations else w

    low, high = w < m, w > b
    w = np.clip(w, m, b)
    fixed = low | high
    it = 0
    for it in range(1, len(w) + 2):
        free = ~fixed
        s_g = w[fixed].sum()
        s_u = w[free].sum()
        if s_u <= 0:
            residual = 1.0 - w.sum()
            if abs(residual) > tol:
                room = (b - w) if residual > 0 else (w - m)
                if room.sum() <= 0:
                    raise ZeroFreeMass(f"no room to absorb residual {residual:.3g}")
                w = np.clip(w + residual * room / room.sum(), m, b)
            break
        w[free] *= (1.0 - s_g) / s_u
        low, high = free & (w < m), free & (w > b)
        if not (low.any() or high.any()):
            break
        w[low], w[high] = m[low], b[high]
        fixed |= low | high
    else:
        raise ZeroFreeMass("normalization did not settle")
    return (w, it) if return_iterations else w


class WeightNormalizer(TransformerMixin, BaseEstimator):
    """Row-wise :func:`normalize_weights` for arrays of weight vectors."""

    def __init__(self, m=None, b=None):
        self.m = m
        self.b = b

    def fit(self, X=None, y=None):
        self.m_, self.b_ = _check_bounds(self.m, self.b)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        flat = X.reshape(-1, X.shape[-1])
        out = np.array([normalize_weights(row, self.m_, self.b_) for row in flat])
        return out.reshape(X.shape)


def annualized_sharpe(ann_eff_return, ann_volatility, rfr=DEFAULT_RFR):
    if ann_volatility <= 0:
        return None
    return (ann_eff_return - rfr) / ann_volatility


def marr_per_period(delta_t, annual=ANNUAL_MARR):
    return annual / (365.0 / delta_t)


@dataclass
class FinancialReport:
    ann_sharpe: object  # float, or None when volatility is zero
    ann_eff_return: float
    ann_volatility: float
    eff_return_raw: float
    volatility_raw: float
    marr: float
    rfr: float
    passes_marr: bool
    period_eff_return: list
    period_volatility: list
    period_passes_marr: list

    def to_dict(self):
        return asdict(self)


def scores_from_weights(weights, problem, rfr=DEFAULT_RFR):
    """Financial scores of an explicit (n_t, n_a) weight trajectory.

    Each period's effective return is its own return minus its own
    transaction cost.
    """
    terms = objective_terms(weights, problem)
    dt, n_t = problem.tensors.delta_t, problem.n_t
    period_eff = terms["return"] - terms["cost"]
    eff = float(period_eff.sum())
    risk = float(terms["risk"].sum())
    vol_raw = math.sqrt(max(dt * risk, 0.0))
    ann_vol = math.sqrt(365.0 / (dt * n_t)) * vol_raw
    ann_ret = eff * 365.0 / (n_t * dt)
    marr = marr_per_period(dt)
    per_pass = [bool(x >= marr) for x in period_eff]
    return FinancialReport(
        ann_sharpe=annualized_sharpe(ann_ret, ann_vol, rfr),
        ann_eff_return=ann_ret,
        ann_volatility=ann_vol,
        eff_return_raw=eff,
        volatility_raw=vol_raw,
        marr=marr,
        rfr=rfr,
        passes_marr=all(per_pass),
        period_eff_return=[float(x) for x in period_eff],
        period_volatility=[float(math.sqrt(max(dt * r, 0.0))) for r in terms["risk"]],
        period_passes_marr=per_pass,
    )


def financial_scores(strategy, problem, rfr=DEFAULT_RFR):
    if not strategy.normalized or not strategy.check(problem.m, problem.b):
        raise NotNormalized("financial scores need a normalized strategy")
    return scores_from_weights(strategy.weights, problem, rfr)


def normalized_strategy(strategy, problem):
    w = np.array([normalize_weights(row, problem.m, problem.b) for row in strategy.weights])
    return Strategy(w, normalized=True, source_bits=strategy.source_bits)


# ---------------------------------------------------------------- frontier

def project_capped_simplex(v, m, b):
    """Euclidean projection onto ``{w : sum(w) = 1, m <= w <= b}``.

    The projection is ``clip(v - tau, m, b)`` for the shift ``tau`` where the
    clipped sum equals one. That sum is piecewise linear and nonincreasing in
    ``tau`` with kinks at ``v - b`` and ``v - m``, so ``tau`` is found exactly
    by evaluating the kinks and interpolating inside the bracketing segment.
    """
    kinks = np.unique(np.concatenate([v - b, v - m]))
    sums = np.clip(v[None, :] - kinks[:, None], m, b).sum(axis=1)  # decreasing
    k = int(np.searchsorted(-sums, -1.0, side="left"))  # first kink with sum <= 1
    if k == 0:
        tau = kinks[0]
    elif k == len(kinks):
        tau = kinks[-1]
    else:
        s0, s1 = sums[k - 1], sums[k]
        tau = kinks[k - 1] + (s0 - 1.0) * (kinks[k] - kinks[k - 1]) / (s0 - s1)
    return np.clip(v - tau, m, b)


def return_range(mu, m, b):
    """Min and max of ``mu . w`` over the bounded simplex (greedy fill)."""
    def extreme(order):
        w = m.copy()
        left = 1.0 - m.sum()
        for a in order:
            add = min(b[a] - m[a], left)
            w[a] += add
            left -= add
        return w

    w_hi = extreme(np.argsort(-mu, kind="stable"))
    w_lo = extreme(np.argsort(mu, kind="stable"))
    return float(mu @ w_lo), float(mu @ w_hi), w_lo, w_hi


def project_return_slice(v, R, target, m, b, tol=1e-13):
    """Euclidean projection onto ``{w : sum(w) = 1, R . w = target, m <= w <= b}``.

    The projection is the capped-simplex projection of ``v - kappa * R`` for
    some multiplier ``kappa``. Projections are monotone, so ``R . w`` is
    nonincreasing in ``kappa`` and a bracketing bisection finds it.
    """
    def ret(k):
        w = project_capped_simplex(v - k * R, m, b)
        return float(R @ w) - target, w

    scale = max(1.0, float(np.max(np.abs(v))))
    lo, hi = -scale, scale
    f_lo, w_lo = ret(lo)
    while f_lo < 0 and lo > -1e12:
        lo *= 4.0
        f_lo, w_lo = ret(lo)
    f_hi, w_hi = ret(hi)
    while f_hi > 0 and hi < 1e12:
        hi *= 4.0
        f_hi, w_hi = ret(hi)
    if f_lo < -tol or f_hi > tol:
        raise InfeasibleBounds(f"return {target:.6g} outside the attainable range")
    for _ in range(200):
        if f_lo <= tol:
            return w_lo
        if f_hi >= -tol:
            return w_hi
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid, w_mid = ret(mid)
        if f_mid > 0:
            lo, f_lo, w_lo = mid, f_mid, w_mid
        else:
            hi, f_hi, w_hi = mid, f_mid, w_mid
    return w_lo if abs(f_lo) <= abs(f_hi) else w_hi


def _min_variance(sigma, mu, m, b, target=None, w_init=None, tol=1e-10, max_iter=20000):
    """Accelerated projected gradient (FISTA with restarts) for ``min w' S w``.

    The feasible set is the bounded simplex, cut by ``mu . w = target`` when a
    target is given; both projections are exact. The problem is rescaled so
    ``sigma`` has unit trace and the returns unit spread.
    """
    n = len(mu)
    S = sigma / max(np.trace(sigma) / n, 1e-300)
    r_spread = max(np.ptp(mu), 1e-300)
    R = mu / r_spread
    if target is None:
        proj = lambda v: project_capped_simplex(v, m, b)  # noqa: E731
    else:
        tgt = target / r_spread
        proj = lambda v: project_return_slice(v, R, tgt, m, b)  # noqa: E731
    L = 2.0 * np.linalg.eigvalsh(S)[-1] + 1e-12
    w = proj(np.full(n, 1.0 / n) if w_init is None else np.asarray(w_init, dtype=float))
    z, tk = w.copy(), 1.0
    for _ in range(max_iter):
        w_new = proj(z - 2.0 * S @ z / L)
        # distance moved by a projected gradient step from z: zero exactly at a KKT point
        if float(np.max(np.abs(w_new - z))) <= tol:
            return w_new
        if (z - w_new) @ (w_new - w) > 0:  # momentum points uphill: restart
            tk = 1.0
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        z = w_new + (tk - 1) / t_next * (w_new - w)
        w, tk = w_new, t_next
    raise SolverStall(f"projected gradient still moving after {max_iter} steps")


def min_variance_portfolio(mu_t, sigma_t, m, b, target=None):
    """Bounded minimum-variance weights, optionally at the fixed return ``target``."""
    mu = np.asarray(mu_t, dtype=float)
    m, b = _check_bounds(m, b)
    return _min_variance(np.asarray(sigma_t, dtype=float), mu, m, b, target=target)


def efficient_frontier(mu_t, sigma_t, m, b, n_points=50, return_weights=False):
    """Bounded minimum-variance portfolios from the minimum-variance point upward.

    Returns a list of ``(volatility, return)`` pairs sorted by return.
    """
    mu = np.asarray(mu_t, dtype=float)
    sigma = np.asarray(sigma_t, dtype=float)
    m, b = _check_bounds(m, b)
    r_lo, r_hi, _, w_hi = return_range(mu, m, b)
    w_mv = _min_variance(sigma, mu, m, b)
    r_mv = float(mu @ w_mv)
    if r_hi - r_mv <= 1e-12 * max(1.0, abs(r_hi)) or n_points < 2:
        pts, ws = [w_mv], [w_mv]
    else:
        targets = np.linspace(r_mv, r_hi, n_points)
        ws = [w_mv]
        w = w_mv
        for tau in targets[1:-1]:
            w = _min_variance(sigma, mu, m, b, target=tau, w_init=w)
            ws.append(w)
        # with distinct returns the greedy maximizer is the only portfolio at r_hi
        if len(np.unique(mu)) == len(mu):
            ws.append(w_hi)
        else:
            ws.append(_min_variance(sigma, mu, m, b, target=r_hi, w_init=w_hi))
        pts = ws
    out = []
    for w in pts:
        var = max(float(w @ sigma @ w), 0.0)
        out.append((math.sqrt(var), float(mu @ w)))
    return (out, ws) if return_weights else out


def write_report(report, path):
    Path(path).write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")
