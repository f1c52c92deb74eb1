"""Classical reference points: random noise baseline, enumeration and annealing."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptySampleSet, TooLarge
from .model import BINARY, evaluate_cost

MAX_EXHAUSTIVE = 26


@dataclass
class CostDistribution:
    costs: np.ndarray  # sorted ascending
    offset: float
    pct_below_offset: float
    min_cost: float

    def histogram(self):
        """Distinct costs with multiplicities, as ``(cost, count)`` rows."""
        vals, counts = np.unique(self.costs, return_counts=True)
        return list(zip(vals.tolist(), counts.tolist()))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cost", "count"])
            for c, k in self.histogram():
                w.writerow([repr(c), k])


def random_baseline(q, n=1_000_000, seed=None, chunk=1 << 16):
    """Costs of ``n`` uniformly random bit strings; the offset is their mean."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    costs = np.empty(n)
    for s in range(0, n, chunk):
        k = min(chunk, n - s)
        x = rng.integers(0, 2, size=(k, q.n_vars), dtype=np.uint8)
        costs[s:s + k] = evaluate_cost(x, q)
    costs.sort()
    offset = float(costs.mean())
    return CostDistribution(costs, offset, float(np.mean(costs < offset)), float(costs[0]))


def pct_below_offset(samples, q, offset):
    """Count-weighted fraction of samples whose cost is strictly below ``offset``."""
    if samples.total == 0:
        raise EmptySampleSet("no samples")
    c = samples.costs(q)
    return float(samples.counts[c < offset].sum() / samples.total)


def _bit_reverse(idx, n):
    out = np.zeros_like(idx)
    for k in range(n):
        out |= ((idx >> k) & 1) << (n - 1 - k)
    return out


def exhaustive_solve(q, chunk_bits=18):
    """Global minimum by enumeration; ties go to the lexicographically smallest string."""
    n = q.n_vars
    if q.kind != BINARY:
        raise ValueError("exhaustive_solve expects a binary form")
    if n > MAX_EXHAUSTIVE:
        raise TooLarge(f"{n} variables exceeds the enumeration limit of {MAX_EXHAUSTIVE}")
    total = 1 << n
    step = 1 << min(chunk_bits, n)
    shifts = np.arange(n, dtype=np.int64)
    best_cost, best_key = np.inf, None
    for start in range(0, total, step):
        idx = np.arange(start, min(start + step, total), dtype=np.int64)
        x = ((idx[:, None] >> shifts) & 1).astype(np.uint8)
        c = evaluate_cost(x, q)
        cmin = c.min()
        if cmin > best_cost:
            continue
        key = _bit_reverse(idx[c == cmin], n).min()
        if cmin < best_cost or key < best_key:
            best_cost, best_key = float(cmin), int(key)
    bits = np.array([(best_key >> (n - 1 - k)) & 1 for k in range(n)], dtype=np.uint8)
    return bits, best_cost


def simulated_annealing(q, budget=10_000, seed=None, t_start=None, t_end=None):
    """Single-flip Metropolis annealing with geometric cooling over ``budget`` sweeps.

    Returns the best string ever visited and its cost.
    """
    if budget < 1:
        raise ValueError("budget must be at least one sweep")
    if q.kind != BINARY:
        raise ValueError("simulated_annealing expects a binary form")
    n = q.n_vars
    rng = np.random.default_rng(seed)
    h = q.linear
    Js = q.quadratic + q.quadratic.T
    scale = np.abs(h) + np.abs(Js).sum(axis=1)
    if t_start is None:
        t_start = max(float(scale.max()), 1e-12)
    if t_end is None:
        nz = np.abs(np.concatenate([h, q.quadratic[q.quadratic != 0]]))
        nz = nz[nz > 0]
        t_end = 1e-3 * (float(nz.min()) if nz.size else 1.0)
    t_end = min(t_end, t_start)
    alpha = (t_end / t_start) ** (1.0 / max(budget - 1, 1))

    x = rng.integers(0, 2, n).astype(float)
    field = h + Js @ x
    cost = float(evaluate_cost(x.astype(np.uint8), q))
    best_x, best_cost = x.copy(), cost
    T = t_start
    Js_cols = [Js[:, i].copy() for i in range(n)]
    for _ in range(budget):
        order = rng.permutation(n)
        u = rng.random(n)
        for k in range(n):
            i = order[k]
            d = (1.0 - 2.0 * x[i]) * field[i]
            if d <= 0 or u[k] < np.exp(-d / T):
                step = 1.0 - 2.0 * x[i]
                x[i] += step
                field += step * Js_cols[i]
                cost += d
                if cost < best_cost - 1e-15:
                    best_cost, best_x = cost, x.copy()
        T *= alpha
    bits = best_x.astype(np.uint8)
    return bits, float(evaluate_cost(bits, q))
