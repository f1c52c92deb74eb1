"""QUBO formulation of the dynamic portfolio problem.

Weights are encoded as ``w[t, a] = m[a] + (b[a] - m[a]) / (2**n_r - 1) * sum_r 2**r x[t, a, r]``
with zero-based ``t, a, r`` and qubit ``q = r + n_r * a + t * n_a * n_r``.
The objective is expanded symbolically: every term is a quadratic in the
weight vector, and the weight vector is affine in the bits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import (
    DegenerateRange,
    IndexOutOfRange,
    InfeasibleBounds,
    LengthMismatch,
)
from .market import MarketTensors

BINARY = "binary"
SPIN = "spin"
CUBE_ROOT_2 = 2.0 ** (1.0 / 3.0)


def as_bits(bits, n=None):
    """Coerce a bit string, sequence or array to a uint8 array.

    Character ``q`` of a string is variable ``q``.
    """
    if isinstance(bits, str):
        arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
    else:
        arr = np.asarray(bits)
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
    if np.any((arr != 0) & (arr != 1)):
        raise ValueError("bits must be 0/1")
    arr = arr.astype(np.uint8)
    if n is not None and arr.shape[-1] != n:
        raise LengthMismatch(f"expected {n} bits, got {arr.shape[-1]}")
    return arr


def bits_to_str(bits):
    return "".join("1" if v else "0" for v in np.asarray(bits).ravel())


@dataclass(frozen=True)
class QuadraticForm:
    """``constant + linear . v + sum_{i<j} quadratic[i, j] v_i v_j``.

    ``quadratic`` is stored dense and strictly upper triangular.
    """

    n_vars: int
    constant: float
    linear: np.ndarray
    quadratic: np.ndarray
    kind: str = BINARY

    def __post_init__(self):
        n = int(self.n_vars)
        lin = np.asarray(self.linear, dtype=float).reshape(n)
        quad = np.asarray(self.quadratic, dtype=float).reshape(n, n)
        if np.any(np.tril(quad) != 0):
            raise ValueError("quadratic must be strictly upper triangular")
        if self.kind not in (BINARY, SPIN):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        lin.setflags(write=False)
        quad.setflags(write=False)
        object.__setattr__(self, "n_vars", n)
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "quadratic", quad)

    @classmethod
    def from_matrix(cls, constant, linear, matrix, kind=BINARY):
        """Build from an arbitrary square pair matrix, folding its diagonal.

        Binary diagonals become linear terms (x*x = x); spin diagonals become
        constants (z*z = 1).
        """
        matrix = np.asarray(matrix, dtype=float)
        linear = np.array(linear, dtype=float)
        diag = np.diag(matrix).copy()
        if kind == BINARY:
            linear = linear + diag
        else:
            constant = constant + diag.sum()
        upper = np.triu(matrix, 1) + np.tril(matrix, -1).T
        return cls(len(linear), constant, linear, upper, kind)

    @classmethod
    def zeros(cls, n, kind=BINARY):
        return cls(n, 0.0, np.zeros(n), np.zeros((n, n)), kind)

    def pairs(self):
        """Nonzero couplings as ``(i, j, value)`` with ``i < j``."""
        ii, jj = np.nonzero(self.quadratic)
        return [(int(i), int(j), float(self.quadratic[i, j])) for i, j in zip(ii, jj)]

    def energy(self, values):
        """Evaluate at raw variable values (0/1 or -1/+1); batched on the last axis."""
        v = np.asarray(values, dtype=float)
        if v.shape[-1] != self.n_vars:
            raise LengthMismatch(f"expected {self.n_vars} variables, got {v.shape[-1]}")
        return self.constant + v @ self.linear + np.sum((v @ self.quadratic) * v, axis=-1)

    def to_dict(self):
        return {
            "n_vars": self.n_vars,
            "constant": self.constant,
            "linear": self.linear.tolist(),
            "quadratic": [{"i": i, "j": j, "v": v} for i, j, v in self.pairs()],
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d):
        n = int(d["n_vars"])
        quad = np.zeros((n, n))
        for e in d["quadratic"]:
            i, j = int(e["i"]), int(e["j"])
            if not 0 <= i < j < n:
                raise ValueError(f"bad pair ({i}, {j})")
            quad[i, j] += float(e["v"])
        return cls(n, float(d["constant"]), d["linear"], quad, d.get("kind", BINARY))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def evaluate_cost(bits, q, chunk=1 << 16):
    """Cost of one bit string, or of each row of a 2-D bit array.

    Bits are always 0/1; for a spin form they are mapped through ``z = 1 - 2x``.
    """
    x = as_bits(bits)
    if x.shape[-1] != q.n_vars:
        raise LengthMismatch(f"expected {q.n_vars} bits, got {x.shape[-1]}")
    if x.ndim == 1:
        v = x.astype(float)
        if q.kind == SPIN:
            v = 1.0 - 2.0 * v
        return float(q.energy(v))
    out = np.empty(len(x))
    for s in range(0, len(x), chunk):
        v = x[s: s + chunk].astype(float)
        if q.kind == SPIN:
            v = 1.0 - 2.0 * v
        out[s: s + chunk] = q.energy(v)
    return out


def qubo_to_ising(q):
    """Substitute ``x = (1 - z) / 2``."""
    if q.kind != BINARY:
        raise ValueError("qubo_to_ising expects a binary form")
    h, J = q.linear, q.quadratic
    coupling_sum = J.sum(axis=0) + J.sum(axis=1)
    constant = q.constant + h.sum() / 2.0 + J.sum() / 4.0
    linear = -h / 2.0 - coupling_sum / 4.0
    return QuadraticForm(q.n_vars, constant, linear, J / 4.0, SPIN)


def ising_to_qubo(q):
    """Substitute ``z = 1 - 2x``."""
    if q.kind != SPIN:
        raise ValueError("ising_to_qubo expects a spin form")
    h, J = q.linear, q.quadratic
    coupling_sum = J.sum(axis=0) + J.sum(axis=1)
    constant = q.constant + h.sum() + J.sum()
    linear = -2.0 * h - 2.0 * coupling_sum
    return QuadraticForm(q.n_vars, constant, linear, 4.0 * J, BINARY)


def qubit_index(t, a, r, n_a, n_r, n_t=None):
    if not (0 <= a < n_a and 0 <= r < n_r and t >= 0 and (n_t is None or t < n_t)):
        raise IndexOutOfRange(f"(t={t}, a={a}, r={r}) outside dims ({n_t}, {n_a}, {n_r})")
    return r + n_r * a + t * (n_a * n_r)


def lambda_coeff(phi, m, b):
    """Quadratic-fit coefficient replacing ``|x|`` by ``lambda * x**2``."""
    if phi <= 0:
        raise DegenerateRange(f"phi must be positive, got {phi}")
    denom = b - phi * m if phi <= 1.0 else phi * b - m
    if denom <= 1e-12:
        raise DegenerateRange(f"denominator {denom} for phi={phi}, m={m}, b={b}")
    return CUBE_ROOT_2 / denom


@dataclass(frozen=True)
class DpoProblem:
    n_a: int
    n_r: int
    n_t: int
    m: np.ndarray
    b: np.ndarray
    nu: np.ndarray
    gamma: float
    rho: float
    tensors: MarketTensors
    omega0: Optional[np.ndarray] = None
    tickers: tuple = ()

    def __post_init__(self):
        for name in ("m", "b", "nu"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(self.n_a)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        omega0 = np.zeros(self.n_a) if self.omega0 is None else np.asarray(self.omega0, dtype=float)
        omega0 = omega0.reshape(self.n_a)
        omega0.setflags(write=False)
        object.__setattr__(self, "omega0", omega0)
        if min(self.n_a, self.n_r, self.n_t) < 1:
            raise ValueError("n_a, n_r, n_t must be positive")
        if np.any(self.m < 0) or np.any(self.b > 1) or np.any(self.m > self.b):
            raise InfeasibleBounds("need 0 <= m_a <= B_a <= 1")
        if self.m.sum() > 1 + 1e-12 or self.b.sum() < 1 - 1e-12:
            raise InfeasibleBounds(f"sum(m)={self.m.sum()} > 1 or sum(B)={self.b.sum()} < 1")
        if np.any(self.nu < 0) or self.gamma < 0 or self.rho < 0:
            raise ValueError("nu, gamma and rho must be non-negative")
        tz = self.tensors
        if tz.mu.shape != (self.n_t, self.n_a) or tz.phi.shape != (self.n_t, self.n_a):
            raise ValueError("market tensors do not match (n_t, n_a)")
        if tz.sigma.shape != (self.n_t, self.n_a, self.n_a):
            raise ValueError("covariance tensor does not match (n_t, n_a, n_a)")
        if self.tickers and len(self.tickers) != self.n_a:
            raise ValueError("one ticker per asset")
        object.__setattr__(self, "tickers", tuple(self.tickers))

    @property
    def n_q(self):
        return self.n_a * self.n_r * self.n_t

    @property
    def step(self):
        """Weight increment of the lowest-order bit of each asset."""
        return (self.b - self.m) / (2 ** self.n_r - 1)

    @property
    def lambdas(self):
        phi = self.tensors.phi
        return np.array(
            [[lambda_coeff(phi[t, a], self.m[a], self.b[a]) for a in range(self.n_a)]
             for t in range(self.n_t)]
        )

    def bit_weights(self):
        """Per-qubit increment to its asset's weight, shape (n_q,)."""
        r = np.arange(self.n_r)
        per = self.step[:, None] * (2.0 ** r)[None, :]  # (n_a, n_r)
        return np.tile(per.ravel(), self.n_t)

    def qubit_index(self, t, a, r):
        return qubit_index(t, a, r, self.n_a, self.n_r, self.n_t)


@dataclass
class Strategy:
    weights: np.ndarray  # (n_t, n_a)
    normalized: bool = False
    source_bits: Optional[str] = None
    scores: dict = field(default_factory=dict)

    def check(self, m, b, tol=1e-9):
        w = np.asarray(self.weights)
        return bool(
            np.all(np.abs(w.sum(axis=1) - 1.0) <= tol)
            and np.all(w >= m - tol) and np.all(w <= b + tol)
        )


def weights_from_bits(bits, problem, n_t=None):
    """Decode bits (fractional values allowed) into weights of shape (..., n_t, n_a)."""
    x = np.asarray(bits, dtype=float)
    n_t = problem.n_t if n_t is None else n_t
    n = n_t * problem.n_a * problem.n_r
    if x.shape[-1] != n:
        raise LengthMismatch(f"expected {n} bits, got {x.shape[-1]}")
    x = x.reshape(x.shape[:-1] + (n_t, problem.n_a, problem.n_r))
    levels = x @ (2.0 ** np.arange(problem.n_r))
    return problem.m + problem.step * levels


def encode_weights(bits, problem):
    """Map a full-horizon bit string onto an (unnormalized) :class:`Strategy`."""
    x = as_bits(bits, problem.n_q)
    return Strategy(weights_from_bits(x, problem), normalized=False, source_bits=bits_to_str(x))


def _assemble(problem, times, omega_prev):
    """Expand the objective restricted to ``times`` into a binary form.

    Variables are the bits of the selected time steps in qubit order; the
    weights preceding ``times[0]`` are the constant ``omega_prev``.
    """
    n_a, n_r = problem.n_a, problem.n_r
    T = len(times)
    k = T * n_a
    tz = problem.tensors
    mu = tz.mu[times].ravel()
    phi = tz.phi[times]
    lam = problem.lambdas[times]

    # affine decode: w = w0 + A x
    A = np.zeros((k, k * n_r))
    per = problem.step[:, None] * (2.0 ** np.arange(n_r))[None, :]
    for row in range(k):
        a = row % n_a
        A[row, row * n_r:(row + 1) * n_r] = per[a]
    w0 = np.tile(problem.m, T)

    # objective in weight space: w.M.w + g.w + c0
    M = np.zeros((k, k))
    for i in range(T):
        M[i * n_a:(i + 1) * n_a, i * n_a:(i + 1) * n_a] += 0.5 * problem.gamma * tz.sigma[times[i]]

    S = np.kron(np.eye(T), np.ones((1, n_a)))
    M += problem.rho * S.T @ S
    g = -mu - 2.0 * problem.rho * S.T @ np.ones(T)
    c0 = problem.rho * T

    D = np.eye(k)
    for i in range(1, T):
        for a in range(n_a):
            D[i * n_a + a, (i - 1) * n_a + a] = -phi[i, a]
    e = np.zeros(k)
    e[:n_a] = -phi[0] * np.asarray(omega_prev, dtype=float)
    W = np.diag(np.tile(problem.nu, T) * lam.ravel())
    M += D.T @ W @ D
    g = g + 2.0 * D.T @ W @ e
    c0 += e @ W @ e

    P = A.T @ M @ A
    lin = 2.0 * A.T @ M @ w0 + A.T @ g
    const = w0 @ M @ w0 + g @ w0 + c0
    return QuadraticForm.from_matrix(const, lin, P, BINARY)


def build_qubo(problem):
    """Full-horizon objective ``-F + gamma/2 R + C + Gamma`` over all n_q bits."""
    return _assemble(problem, list(range(problem.n_t)), problem.omega0)


def build_single_time_qubo(problem, t, omega_prev=None):
    """Objective of rebalance ``t`` alone with the previous weights held fixed.

    ``t`` is zero-based; ``omega_prev=None`` means the problem's initial weights.
    """
    if not 0 <= t < problem.n_t:
        raise IndexOutOfRange(f"t={t} outside [0, {problem.n_t})")
    prev = problem.omega0 if omega_prev is None else np.asarray(omega_prev, dtype=float)
    if prev.shape != (problem.n_a,):
        raise LengthMismatch(f"omega_prev must have {problem.n_a} entries")
    return _assemble(problem, [t], prev)


def objective_terms(weights, problem, omega_prev=None, times=None):
    """Per-step return, risk, transaction cost and restriction on explicit weights.

    ``weights`` has shape (T, n_a) for the time indices ``times`` (default all).
    Returns a dict of arrays of length T; ``risk`` is the raw quadratic form
    (not multiplied by gamma/2).
    """
    w = np.asarray(weights, dtype=float)
    times = list(range(problem.n_t)) if times is None else list(times)
    tz = problem.tensors
    prev = problem.omega0 if omega_prev is None else np.asarray(omega_prev, dtype=float)
    shifted = np.vstack([prev[None, :], w[:-1]])
    lam = problem.lambdas[times]
    ret = np.einsum("ta,ta->t", tz.mu[times], w)
    risk = np.einsum("ta,tab,tb->t", w, tz.sigma[times], w)
    cost = np.sum(problem.nu * lam * (w - tz.phi[times] * shifted) ** 2, axis=1)
    restr = problem.rho * (w.sum(axis=1) - 1.0) ** 2
    total = -ret + 0.5 * problem.gamma * risk + cost + restr
    return {"return": ret, "risk": risk, "cost": cost, "restriction": restr, "total": total}


def problem_from_config(cfg, tensors):
    """Build a :class:`DpoProblem` from the JSON config layout and market tensors."""
    dims = cfg["dims"]
    assets = cfg["assets"]
    n_a = int(dims["n_a"])
    if len(assets) != n_a:
        raise ValueError(f"config lists {len(assets)} assets but n_a={n_a}")
    return DpoProblem(
        n_a=n_a,
        n_r=int(dims["n_r"]),
        n_t=int(dims["n_t"]),
        m=[float(x["m"]) for x in assets],
        b=[float(x["b"]) for x in assets],
        nu=[float(x["nu"]) for x in assets],
        gamma=float(cfg["gamma"]),
        rho=float(cfg["rho"]),
        tensors=tensors,
        omega0=cfg.get("omega0"),
        tickers=tuple(x["ticker"] for x in assets),
    )
