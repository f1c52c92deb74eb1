"""Differential evolution and the VQE / time-chained VQEC loops."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .analytics import normalize_weights
from .exceptions import NonFiniteObjective
from .model import (
    Strategy,
    bits_to_str,
    build_qubo,
    build_single_time_qubo,
    qubo_to_ising,
    weights_from_bits,
)
from .simulator import DEFAULT_MAX_QUBITS, Circuit, build_ansatz, energy_diagonal, sample

TWO_PI = 2.0 * math.pi


@dataclass
class DeConfig:
    population: int = 28
    base_generations: int = 20
    extension: int = 5
    max_generations: int = 25
    window: int = 5
    conv_tol: float = 0.025
    mutation: tuple = (0.5, 1.0)
    crossover: float = 0.7
    strategy: str = "rand1bin"
    bounds: tuple = (-TWO_PI, TWO_PI)
    seed: object = None
    workers: int = 1

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if not 0 < self.conv_tol < 1:
            raise ValueError("conv_tol must lie in (0, 1)")
        if self.max_generations < 1 or self.base_generations < 1:
            raise ValueError("generation counts must be positive")
        if not 0 <= self.crossover <= 1:
            raise ValueError("crossover must lie in [0, 1]")
        if self.strategy not in ("best1bin", "rand1bin"):
            raise ValueError(f"unknown DE strategy {self.strategy!r}")


@dataclass
class RunHistory:
    mean_cost: list = field(default_factory=list)
    min_cost: list = field(default_factory=list)
    best_params: list = field(default_factory=list)
    converged: bool = False
    generations_used: int = 0
    delta_mean: float = float("nan")

    @property
    def best_theta(self):
        return np.asarray(self.best_params[-1])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["generation", "mean_cost", "min_cost"])
            for g, (a, b) in enumerate(zip(self.mean_cost, self.min_cost)):
                w.writerow([g, repr(float(a)), repr(float(b))])


def mean_cost_change(mean_cost, i, window=5):
    """Relative change ``|O[i] - O[i-window]| / |O[i]|`` of the generation mean."""
    num = abs(mean_cost[i] - mean_cost[i - window])
    if num == 0:
        return 0.0
    den = abs(mean_cost[i])
    return num / den if den > 0 else math.inf


def de_optimize(objective, n_params, config):
    """Differential evolution (best/1/bin or rand/1/bin) with dithered mutation.

    Generation 0 is the random initial population. At generation
    ``base_generations`` the run stops if the mean-cost change over the last
    ``window`` generations is within ``conv_tol``; otherwise it is extended by
    ``extension`` generations at a time up to ``max_generations``.
    Returns ``(theta_best, RunHistory)``.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    lo = np.broadcast_to(np.asarray(cfg.bounds[0], dtype=float), (n_params,))
    hi = np.broadcast_to(np.asarray(cfg.bounds[1], dtype=float), (n_params,))
    P = cfg.population
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers and cfg.workers > 1 else None

    def evaluate(pop):
        vals = list(pool.map(objective, pop)) if pool else [objective(p) for p in pop]
        vals = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NonFiniteObjective("objective returned a non-finite value")
        return vals

    try:
        pop = lo + rng.random((P, n_params)) * (hi - lo)
        energy = evaluate(pop)
        hist = RunHistory()

        def record():
            k = int(np.argmin(energy))
            hist.mean_cost.append(float(energy.mean()))
            hist.min_cost.append(float(energy[k]))
            hist.best_params.append(pop[k].tolist())

        record()
        checkpoint = min(cfg.base_generations, cfg.max_generations)
        gen = 0
        while True:
            gen += 1
            F = rng.uniform(*cfg.mutation) if np.ndim(cfg.mutation) else float(cfg.mutation)
            trials = np.empty_like(pop)
            best = int(np.argmin(energy))
            for i in range(P):
                choices = rng.choice(P - 1, 3, replace=False)
                r1, r2, r3 = choices + (choices >= i)
                base = pop[best] if cfg.strategy == "best1bin" else pop[r1]
                mutant = base + F * (pop[r2] - pop[r3])
                out = (mutant < lo) | (mutant > hi)
                if out.any():
                    mutant[out] = lo[out] + rng.random(out.sum()) * (hi[out] - lo[out])
                mask = rng.random(n_params) < cfg.crossover
                mask[rng.integers(n_params)] = True
                trials[i] = np.where(mask, mutant, pop[i])
            e_trial = evaluate(trials)
            better = e_trial <= energy
            pop[better] = trials[better]
            energy[better] = e_trial[better]
            record()
            if gen < checkpoint:
                continue
            if gen >= cfg.window:
                hist.delta_mean = mean_cost_change(hist.mean_cost, gen, cfg.window)
                hist.converged = hist.delta_mean <= cfg.conv_tol
            if hist.converged or gen >= cfg.max_generations:
                break
            checkpoint = min(gen + cfg.extension, cfg.max_generations)
        hist.generations_used = gen
        return np.asarray(hist.best_params[-1]), hist
    finally:
        if pool:
            pool.shutdown()


def _spawn(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _variational_run(ising, spec, de, shots, noise_p, seed):
    de_seed, sample_seed = _spawn(seed, 2)
    circuit = Circuit(spec)
    diag = energy_diagonal(ising)

    def objective(theta):
        psi = circuit.run(theta).amplitudes
        return float((psi * psi) @ diag)

    cfg = DeConfig(**{**de.__dict__, "seed": de_seed})
    theta, hist = de_optimize(objective, spec.n_params, cfg)
    samples = sample(circuit.run(theta), shots, noise_p, sample_seed)
    return samples, hist


def vqe_solve(problem, spec, de, shots=1_000_000, noise_p=0.0):
    """Optimize the full-horizon ansatz and sample its final state.

    Returns ``(SampleSet, RunHistory)``; ``history.best_theta`` holds the
    optimized parameters.
    """
    if spec.n_qubits != problem.n_q:
        raise ValueError(f"ansatz has {spec.n_qubits} qubits, problem needs {problem.n_q}")
    ising = qubo_to_ising(build_qubo(problem))
    return _variational_run(ising, spec, de, shots, noise_p, de.seed)


@dataclass
class VqecResult:
    samples: list
    strategy: Strategy
    histories: list
    step_bits: list
    step_costs: list
    qubos: list


def vqec_solve(problem, de, shots=1_000_000, noise_p=0.0, normalize=True,
               topology=None, max_qubits=DEFAULT_MAX_QUBITS, order=None):
    """Solve one rebalance at a time, chaining each step's chosen weights forward.

    The chosen string at each step is the lowest-cost sampled string; its
    decoded weights (normalized unless ``normalize=False``) become the previous
    weights of the next step's transaction term. ``order`` only makes sense for
    problems without transaction costs and permutes the step sequence.
    """
    spec = build_ansatz(problem.n_a, problem.n_r, 1, "vqec", topology, max_qubits)
    seeds = _spawn(de.seed, problem.n_t)
    order = list(range(problem.n_t)) if order is None else list(order)
    prev = problem.omega0
    weights = np.zeros((problem.n_t, problem.n_a))
    samples, hists, bits, costs, qubos = {}, {}, {}, {}, {}
    for t in order:
        q = build_single_time_qubo(problem, t, prev)
        ss, hist = _variational_run(qubo_to_ising(q), spec, de, shots, noise_p, seeds[t])
        best, cost = ss.best(q)
        w = weights_from_bits(best, problem, n_t=1)[0]
        if normalize:
            w = normalize_weights(w, problem.m, problem.b)
        weights[t] = w
        prev = w
        samples[t], hists[t], bits[t], costs[t], qubos[t] = ss, hist, best, cost, q
    idx = range(problem.n_t)
    strategy = Strategy(weights, normalized=normalize,
                        source_bits="".join(bits_to_str(bits[t]) for t in idx))
    return VqecResult([samples[t] for t in idx], strategy, [hists[t] for t in idx],
                      [bits[t] for t in idx], [costs[t] for t in idx], [qubos[t] for t in idx])


def write_run(out_dir, history, theta, samples):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    history.to_csv(out / "history.csv")
    payload = {
        "theta": [float(x) for x in theta],
        "converged": history.converged,
        "generations_used": history.generations_used,
        "delta_mean": None if math.isnan(history.delta_mean) else history.delta_mean,
    }
    (out / "theta.json").write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    samples.to_csv(out / "samples.csv")


class _DeParams:
    def _de_config(self):
        return DeConfig(
            population=self.population,
            base_generations=self.base_generations,
            extension=self.extension,
            max_generations=self.max_generations,
            conv_tol=self.conv_tol,
            mutation=tuple(self.mutation),
            crossover=self.crossover,
            seed=self.seed,
            workers=self.workers,
        )


class VQESolver(_DeParams, BaseEstimator):
    """Full-horizon VQE as an estimator.

    ``fit(problem)`` sets ``ansatz_``, ``qubo_``, ``samples_``, ``history_``,
    ``theta_``, ``best_bits_``, ``best_cost_`` and ``strategy_`` (the
    normalized decode of the best sampled string).
    """

    def __init__(self, population=28, base_generations=20, extension=5, max_generations=25,
                 conv_tol=0.025, mutation=(0.5, 1.0), crossover=0.7, shots=1_000_000, noise_p=0.0,
                 seed=None, workers=1, topology=None, max_qubits=DEFAULT_MAX_QUBITS):
        self.population = population
        self.base_generations = base_generations
        self.extension = extension
        self.max_generations = max_generations
        self.conv_tol = conv_tol
        self.mutation = mutation
        self.crossover = crossover
        self.shots = shots
        self.noise_p = noise_p
        self.seed = seed
        self.workers = workers
        self.topology = topology
        self.max_qubits = max_qubits

    def fit(self, problem, y=None):
        from .analytics import normalized_strategy
        from .model import encode_weights

        self.ansatz_ = build_ansatz(problem.n_a, problem.n_r, problem.n_t, "vqe",
                                    self.topology, self.max_qubits)
        self.qubo_ = build_qubo(problem)
        self.samples_, self.history_ = vqe_solve(problem, self.ansatz_, self._de_config(),
                                                 self.shots, self.noise_p)
        self.theta_ = self.history_.best_theta
        self.best_bits_, self.best_cost_ = self.samples_.best(self.qubo_)
        self.strategy_ = normalized_strategy(encode_weights(self.best_bits_, problem), problem)
        return self


class VQECSolver(_DeParams, BaseEstimator):
    """Time-chained VQEC as an estimator; ``fit`` stores a :class:`VqecResult` in ``result_``."""

    def __init__(self, population=28, base_generations=20, extension=5, max_generations=25,
                 conv_tol=0.025, mutation=(0.5, 1.0), crossover=0.7, shots=1_000_000, noise_p=0.0,
                 seed=None, workers=1, normalize=True, topology=None,
                 max_qubits=DEFAULT_MAX_QUBITS):
        self.population = population
        self.base_generations = base_generations
        self.extension = extension
        self.max_generations = max_generations
        self.conv_tol = conv_tol
        self.mutation = mutation
        self.crossover = crossover
        self.shots = shots
        self.noise_p = noise_p
        self.seed = seed
        self.workers = workers
        self.normalize = normalize
        self.topology = topology
        self.max_qubits = max_qubits

    def fit(self, problem, y=None):
        self.result_ = vqec_solve(problem, self._de_config(), self.shots, self.noise_p,
                                  self.normalize, self.topology, self.max_qubits)
        self.strategy_ = self.result_.strategy
        self.histories_ = self.result_.histories
        return self
