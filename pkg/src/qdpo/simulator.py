"""Block-structured Ry/CNOT ansatz and an exact statevector simulator.

Bit order is little-endian throughout: qubit ``q`` is bit ``q`` of the basis
index, and character ``q`` of a bit string. Ry and CNOT are real gates, so
amplitudes are stored as float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    DimensionMismatch,
    ParamLengthMismatch,
    TooManyQubits,
)
from .model import BINARY, SPIN, QuadraticForm, as_bits, bits_to_str

DEFAULT_MAX_QUBITS = 24
INTRA = "intra"
INTER_ASSET = "inter-asset"
INTER_TIME = "inter-time"
LINEAR = "linear"
T_SHAPED = "t"
BIT_ORDER = "little-endian: character q of a bitstring is qubit q"


def block_entanglers(block, shape=LINEAR):
    """CNOT pairs of one intra-asset block.

    Linear blocks use reverse-linear order ``(n-2, n-1), ..., (0, 1)``; T-shaped
    blocks replace the ``(2, 3)`` link by ``(1, 3)``.
    """
    n = len(block)
    local = [(i, i + 1) for i in range(n - 2, -1, -1)]
    if shape == T_SHAPED:
        if n < 4:
            raise ValueError("T-shaped blocks need at least 4 qubits")
        local = [(1, 3) if p == (2, 3) else p for p in local]
    elif shape != LINEAR:
        raise ValueError(f"unknown block shape {shape!r}")
    return [(block[c], block[t]) for c, t in local]


@dataclass(frozen=True)
class AnsatzSpec:
    n_qubits: int
    blocks: tuple  # tuple of tuples of qubit ids
    block_shapes: tuple
    inter_asset_pairs: tuple
    inter_time_pairs: tuple
    layer_plan: tuple
    scheme: str = "vqe"

    @property
    def n_params(self):
        return self.layer_plan.count(INTRA) * self.n_qubits

    def intra_pairs(self):
        out = []
        for blk, shape in zip(self.blocks, self.block_shapes):
            out.extend(block_entanglers(blk, shape))
        return out

    def phase_pairs(self, phase):
        if phase == INTRA:
            return self.intra_pairs()
        if phase == INTER_ASSET:
            return list(self.inter_asset_pairs)
        if phase == INTER_TIME:
            return list(self.inter_time_pairs)
        raise ValueError(phase)

    def to_dict(self):
        return {
            "n_qubits": self.n_qubits,
            "scheme": self.scheme,
            "bit_order": BIT_ORDER,
            "cnot_orientation": "control is the lower qubit id",
            "blocks": [list(b) for b in self.blocks],
            "block_shapes": list(self.block_shapes),
            "inter_asset_pairs": [list(p) for p in self.inter_asset_pairs],
            "inter_time_pairs": [list(p) for p in self.inter_time_pairs],
            "layer_plan": list(self.layer_plan),
            "n_params": self.n_params,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def _oriented(p, q):
    return (p, q) if p < q else (q, p)


def build_ansatz(n_a, n_r, n_t=1, scheme="vqe", topology=None, max_qubits=DEFAULT_MAX_QUBITS):
    """Lay out asset blocks and their entangling links.

    ``scheme="vqec"`` builds a single time section. ``topology`` may override
    ``block_shapes`` (per asset), ``inter_asset`` (pairs within one time
    section, in local qubit ids) and ``inter_time`` (pairs of local ids
    linking section t to t+1). By default assets sit on linear blocks, joined
    in a ring from the top bit of asset a to the bottom bit of asset a+1, and
    the top bits of the same asset are linked across neighbouring sections.
    Set ``max_qubits=None`` to build structures beyond the simulation cap.
    """
    if scheme not in ("vqe", "vqec"):
        raise ValueError(f"unknown scheme {scheme!r}")
    sections = n_t if scheme == "vqe" else 1
    n_qubits = n_a * n_r * sections
    if max_qubits is not None and n_qubits > max_qubits:
        raise TooManyQubits(f"{n_qubits} qubits exceeds the simulation cap of {max_qubits}")
    topology = topology or {}
    per_section = n_a * n_r

    shapes = list(topology.get("block_shapes", [LINEAR] * n_a))
    if len(shapes) != n_a:
        raise ValueError("one block shape per asset")

    blocks, block_shapes = [], []
    for t in range(sections):
        for a in range(n_a):
            start = t * per_section + a * n_r
            blocks.append(tuple(range(start, start + n_r)))
            block_shapes.append(shapes[a])

    if "inter_asset" in topology:
        local_ia = [tuple(p) for p in topology["inter_asset"]]
    else:
        local_ia = [((a + 1) * n_r - 1, (a + 1) * n_r) for a in range(n_a - 1)]
        if n_a > 2:
            local_ia.append((n_r - 1, n_a * n_r - 1))
    inter_asset = []
    for t in range(sections):
        off = t * per_section
        for p, q in local_ia:
            if not (0 <= p < per_section and 0 <= q < per_section) or p == q:
                raise ValueError(f"bad inter-asset pair ({p}, {q})")
            inter_asset.append(_oriented(p + off, q + off))

    inter_time = []
    if scheme == "vqe":
        if "inter_time" in topology:
            local_it = [tuple(p) for p in topology["inter_time"]]
        else:
            local_it = [(a * n_r + n_r - 1, a * n_r + n_r - 1) for a in range(n_a)]
        for t in range(sections - 1):
            for p, q in local_it:
                inter_time.append(_oriented(p + t * per_section, q + (t + 1) * per_section))

    plan = (INTRA, INTER_ASSET, INTRA, INTER_TIME, INTRA) if scheme == "vqe" else (INTRA, INTER_ASSET, INTRA)
    return AnsatzSpec(
        n_qubits=n_qubits,
        blocks=tuple(blocks),
        block_shapes=tuple(block_shapes),
        inter_asset_pairs=tuple(inter_asset),
        inter_time_pairs=tuple(inter_time),
        layer_plan=plan,
        scheme=scheme,
    )


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray

    @property
    def n_qubits(self):
        return int(self.amplitudes.size).bit_length() - 1

    def probabilities(self):
        return self.amplitudes ** 2

    def norm(self):
        return float(np.sqrt(np.sum(self.amplitudes ** 2)))


def _cnot_permutation(n, pairs):
    """Index map ``perm`` with ``new = old[perm]`` for a CNOT sequence."""
    dtype = np.int64 if n > 30 else np.int32
    idx = np.arange(1 << n, dtype=dtype)
    # apply gates last-to-first: new[i] = old[g1(g2(...gk(i)))]
    for c, t in reversed(pairs):
        idx ^= ((idx >> c) & 1) << t
    return idx


def apply_ry_layer(psi, n, thetas):
    """Apply ``Ry(thetas[q])`` on every qubit, in place."""
    for q in range(n):
        th = thetas[q]
        if th == 0.0:
            continue
        c, s = np.cos(th / 2), np.sin(th / 2)
        v = psi.reshape(1 << (n - 1 - q), 2, 1 << q)
        lo = v[:, 0, :].copy()
        hi = v[:, 1, :]
        v[:, 0, :] = c * lo - s * hi
        v[:, 1, :] = s * lo + c * hi
    return psi


class Circuit:
    """Compiled form of an :class:`AnsatzSpec` (CNOT phases pre-permuted)."""

    def __init__(self, spec):
        self.spec = spec
        n = spec.n_qubits
        self._perms = {}
        for phase in set(spec.layer_plan):
            pairs = spec.phase_pairs(phase)
            self._perms[phase] = _cnot_permutation(n, pairs) if pairs else None

    def run(self, theta):
        spec = self.spec
        n = spec.n_qubits
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != spec.n_params:
            raise ParamLengthMismatch(f"expected {spec.n_params} parameters, got {theta.size}")
        psi = np.zeros(1 << n)
        psi[0] = 1.0
        k = 0
        for phase in spec.layer_plan:
            if phase == INTRA:
                apply_ry_layer(psi, n, theta[k:k + n])
                k += n
            perm = self._perms[phase]
            if perm is not None:
                psi = psi[perm]
        return StateVector(psi)


def simulate(spec, theta):
    return Circuit(spec).run(theta)


def energy_diagonal(h):
    """Diagonal of a quadratic form over all ``2**n`` basis states (little-endian)."""
    n = h.n_vars
    idx = np.arange(1 << n, dtype=np.int64)
    vals = np.empty((n, 1 << n))
    for q in range(n):
        bit = ((idx >> q) & 1).astype(float)
        vals[q] = 1.0 - 2.0 * bit if h.kind == SPIN else bit
    diag = np.full(1 << n, h.constant)
    for q in range(n):
        if h.linear[q]:
            diag += h.linear[q] * vals[q]
    for i, j, v in h.pairs():
        diag += v * vals[i] * vals[j]
    return diag


def expectation(sv, h, diagonal=None):
    """``sum_b |A_b|^2 c(b)`` for a diagonal (spin or binary) Hamiltonian."""
    n = sv.n_qubits
    if h.n_vars != n:
        raise DimensionMismatch(f"form has {h.n_vars} variables, state has {n} qubits")
    if diagonal is None:
        diagonal = energy_diagonal(h)
    return float(sv.probabilities() @ diagonal)


@dataclass
class SampleSet:
    """Multiset of bit strings; rows of ``bits`` are unique and sorted."""

    bits: np.ndarray
    counts: np.ndarray
    n_vars: int = field(default=0)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        counts = np.asarray(self.counts, dtype=np.int64)
        if bits.ndim != 2 or len(bits) != len(counts):
            raise ValueError("bits must be (k, n) with one count per row")
        if np.any(counts <= 0):
            raise ValueError("counts must be positive")
        if len(bits):
            uniq, inv = np.unique(bits, axis=0, return_inverse=True)
            merged = np.zeros(len(uniq), dtype=np.int64)
            np.add.at(merged, inv.ravel(), counts)
            bits, counts = uniq, merged
        self.bits = bits
        self.counts = counts
        self.n_vars = bits.shape[1]

    @classmethod
    def from_draws(cls, draws):
        draws = np.asarray(draws, dtype=np.uint8)
        uniq, counts = np.unique(draws, axis=0, return_counts=True)
        return cls(uniq, counts)

    @classmethod
    def from_indices(cls, indices, n):
        uniq, counts = np.unique(np.asarray(indices, dtype=np.int64), return_counts=True)
        bits = ((uniq[:, None] >> np.arange(n)) & 1).astype(np.uint8)
        return cls(bits, counts)

    @classmethod
    def from_dict(cls, entries):
        keys = list(entries)
        if not keys:
            raise ValueError("empty sample dict")
        return cls(np.array([as_bits(k) for k in keys]), [entries[k] for k in keys])

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def entries(self):
        return {bits_to_str(b): int(c) for b, c in zip(self.bits, self.counts)}

    def expand(self):
        """Every draw as a row, in canonical (sorted) order."""
        return np.repeat(self.bits, self.counts, axis=0)

    def costs(self, q):
        from .model import evaluate_cost

        return evaluate_cost(self.bits, q) if len(self.bits) else np.empty(0)

    def best(self, q):
        c = self.costs(q)
        i = int(np.argmin(c))  # rows are sorted, so first minimum is lexicographically smallest
        return self.bits[i].copy(), float(c[i])

    def to_csv(self, path):
        lines = ["bitstring,count"] + [f"{bits_to_str(b)},{int(c)}" for b, c in zip(self.bits, self.counts)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path):
        import csv

        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([as_bits(r["bitstring"]) for r in rows]), [int(r["count"]) for r in rows])


def sample(sv, n_s, noise_p=0.0, seed=None):
    """Draw ``n_s`` basis states, then flip each bit independently with ``noise_p``."""
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    if not 0 <= noise_p < 0.5:
        raise ValueError("noise_p must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    n = sv.n_qubits
    p = sv.probabilities()
    p = p / p.sum()
    idx = rng.choice(p.size, size=n_s, p=p)
    if noise_p > 0:
        flips = rng.random((n_s, n)) < noise_p
        idx = idx ^ (flips.astype(np.int64) << np.arange(n)).sum(axis=1)
    return SampleSet.from_indices(idx, n)
