"""Ising sample-based configuration recovery.

Each iteration learns an occupancy pattern from the per-batch champions of
the current sample set, turns it into per-step investment targets, and
re-corrects the samples by probabilistic bit flips toward those targets.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import EmptySampleSet, LengthMismatch
from .model import as_bits, evaluate_cost, weights_from_bits
from .simulator import SampleSet


@dataclass(frozen=True)
class IsqrConfig:
    n_batches: int = 10
    batch_size: int = None  # default: total // n_batches
    filling_threshold: float = 0.2
    leak_slope: float = 0.1
    max_iterations: int = 20
    conv_tol: float = 0.025
    seed: object = None
    reference: str = "original"  # which set each iteration corrects: "original" or "current"
    flip_mode: str = "targeted"  # "targeted" (weighted minimal flips) or "independent"

    def __post_init__(self):
        if self.n_batches < 1:
            raise ValueError("n_batches must be positive")
        if not 0 < self.filling_threshold < 1:
            raise ValueError("filling_threshold must lie in (0, 1)")
        if not 0 < self.leak_slope <= 1:
            raise ValueError("leak_slope must lie in (0, 1]")
        if self.reference not in ("original", "current"):
            raise ValueError("reference must be 'original' or 'current'")
        if self.flip_mode not in ("targeted", "independent"):
            raise ValueError("flip_mode must be 'targeted' or 'independent'")


@dataclass(frozen=True)
class OccupancyPattern:
    occupancy: np.ndarray  # (n_q,)
    targets: np.ndarray  # (n_t,)
    champions: np.ndarray = field(default=None, repr=False)


def _partition(total, cfg, rng):
    """Shuffle draw positions and deal them round-robin into batches."""
    m = min(cfg.n_batches, total)
    size = cfg.batch_size or total // m
    if m * size > total:
        raise ValueError(f"{m} batches of {size} exceed {total} samples")
    perm = rng.permutation(total)
    return [perm[k::m][:size] for k in range(m)]


def learn_pattern(samples, q, cfg, problem, rng=None):
    """Occupancy of the batch champions and the per-step weight totals it implies."""
    if samples.total == 0:
        raise EmptySampleSet("no samples")
    if samples.n_vars != problem.n_q:
        raise LengthMismatch(f"samples have {samples.n_vars} bits, problem needs {problem.n_q}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    costs = samples.costs(q)
    # draw -> unique row; rows are sorted so the smaller row id is the smaller string
    row_of_draw = np.repeat(np.arange(len(samples.counts)), samples.counts)
    champions = []
    for batch in _partition(samples.total, cfg, rng):
        rows = row_of_draw[batch]
        c = costs[rows]
        champions.append(rows[c == c.min()].min())
    champ_bits = samples.bits[np.array(champions)]
    occ = champ_bits.mean(axis=0)
    targets = weights_from_bits(occ, problem).sum(axis=1)
    return OccupancyPattern(occ, targets, champ_bits)


def _step_totals(bits, problem):
    return weights_from_bits(bits, problem).sum(axis=-1)


def flip_probabilities(bits, pattern, cfg, problem):
    """Per-bit flip probabilities of one string (or each row of a 2-D array).

    Disagreement ``d = |x - occupancy|`` passes through a leaky ramp (slope 1
    above the filling threshold, ``leak_slope`` below) and is scaled by the
    bit's encoding weight ``2**r / (2**n_r - 1)``. Only bits whose flip moves
    a violating step's weight total toward its target keep their probability.
    """
    x = as_bits(bits, problem.n_q)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    xf = x.astype(float)
    d = np.abs(xf - pattern.occupancy)
    f = np.where(d >= cfg.filling_threshold, d, cfg.leak_slope * d)
    r = np.tile(np.arange(problem.n_r), problem.n_a * problem.n_t)
    p = f * (2.0 ** r) / (2 ** problem.n_r - 1)

    gap = pattern.targets - _step_totals(xf, problem)  # (k, n_t)
    tol = 0.5 * problem.step.min()
    need_up = np.repeat(gap > tol, problem.n_a * problem.n_r, axis=1)
    need_down = np.repeat(gap < -tol, problem.n_a * problem.n_r, axis=1)
    keep = (need_up & (x == 0)) | (need_down & (x == 1))
    p = np.clip(np.where(keep, p, 0.0), 0.0, 1.0)
    return p[0] if single else p


def _targeted_flips(draws, p, pattern, problem, rng):
    """Flip one bit at a time per violating step until its total reaches the target.

    Each round, every step whose total is off by more than half an encoding
    step draws one bit among those whose flip strictly shrinks the gap, with
    chance proportional to ``p``. A step stops when it is within tolerance or
    no eligible bit has positive weight.
    """
    x = draws.copy()
    block = problem.n_a * problem.n_r
    w_bit = problem.bit_weights().reshape(problem.n_t, block)  # weight added by each bit
    tol = 0.5 * problem.step.min()
    for t in range(problem.n_t):
        sl = slice(t * block, (t + 1) * block)
        xt = x[:, sl]
        pt = p[:, sl]
        for _ in range(block):
            gap = pattern.targets[t] - problem.m.sum() - xt.astype(float) @ w_bit[t]
            active = np.abs(gap) > tol
            if not active.any():
                break
            move = np.where(xt == 0, w_bit[t], -w_bit[t])  # signed change if flipped
            shrinks = np.abs(gap[:, None] - move) < np.abs(gap[:, None]) - 1e-15
            wgt = np.where(shrinks & active[:, None], pt, 0.0)
            tot = wgt.sum(axis=1)
            rows = np.flatnonzero(tot > 0)
            if rows.size == 0:
                break
            cdf = np.cumsum(wgt[rows], axis=1)
            u = rng.random(rows.size) * tot[rows]
            col = np.minimum((cdf <= u[:, None]).sum(axis=1), block - 1)
            xt[rows, col] ^= 1
            pt[rows, col] = 0.0  # a bit flips at most once per pass
        x[:, sl] = xt
    return x


def _correct(reference, pattern, cfg, problem, rng):
    probs = flip_probabilities(reference.bits, pattern, cfg, problem)
    draws = reference.expand()
    p = np.repeat(probs, reference.counts, axis=0)
    if cfg.flip_mode == "targeted":
        return SampleSet.from_draws(_targeted_flips(draws, p, pattern, problem, rng))
    flips = rng.random(draws.shape) < p
    return SampleSet.from_draws(draws ^ flips.astype(np.uint8))


def _stats(ss, q):
    c = ss.costs(q)
    return float(c.min()), float((c * ss.counts).sum() / ss.total)


def _rel_change(new, old):
    num = abs(new - old)
    if num == 0:
        return 0.0
    return num / abs(new) if new != 0 else np.inf


def isqr_run(samples, q, cfg, problem):
    """Iterate pattern learning and correction until the best cost settles.

    Stops once the minimum cost changes by less than ``conv_tol`` (relative)
    between two consecutive iterations, or after ``max_iterations``. Returns
    ``(corrected SampleSet, trace)`` where ``trace`` rows are
    ``(iteration, min_cost, mean_cost)``.
    """
    if samples.total == 0:
        raise EmptySampleSet("no samples")
    rng = np.random.default_rng(cfg.seed)
    current = samples
    trace = []
    for it in range(1, cfg.max_iterations + 1):
        pattern = learn_pattern(current, q, cfg, problem, rng)
        base = samples if cfg.reference == "original" else current
        current = _correct(base, pattern, cfg, problem, rng)
        lo, mean = _stats(current, q)
        trace.append((it, lo, mean))
        if it >= 2 and _rel_change(lo, trace[-2][1]) < cfg.conv_tol:
            break
    return current, trace


def write_trace(trace, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "min_cost", "mean_cost"])
        for it, lo, mean in trace:
            w.writerow([it, repr(lo), repr(mean)])


class ISQR(BaseEstimator):
    """Configuration recovery as an estimator.

    ``fit(samples, q, problem)`` stores ``corrected_``, ``trace_`` and the last
    learned ``pattern_``; ``fit_transform`` returns the corrected set.
    """

    def __init__(self, n_batches=10, batch_size=None, filling_threshold=0.2, leak_slope=0.1,
                 max_iterations=20, conv_tol=0.025, seed=None, reference="original",
                 flip_mode="targeted"):
        self.n_batches = n_batches
        self.batch_size = batch_size
        self.filling_threshold = filling_threshold
        self.leak_slope = leak_slope
        self.max_iterations = max_iterations
        self.conv_tol = conv_tol
        self.seed = seed
        self.reference = reference
        self.flip_mode = flip_mode

    def _config(self):
        return IsqrConfig(**self.get_params())

    def fit(self, samples, q, problem):
        cfg = self._config()
        self.corrected_, self.trace_ = isqr_run(samples, q, cfg, problem)
        self.pattern_ = learn_pattern(self.corrected_, q, cfg, problem)
        return self

    def fit_transform(self, samples, q, problem):
        return self.fit(samples, q, problem).corrected_
