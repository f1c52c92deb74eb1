import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_circuit, naive_cost
from qdpo.exceptions import DimensionMismatch, ParamLengthMismatch, TooManyQubits
from qdpo.model import SPIN, QuadraticForm, evaluate_cost
from qdpo.simulator import (
    INTER_ASSET,
    INTRA,
    AnsatzSpec,
    Circuit,
    SampleSet,
    StateVector,
    block_entanglers,
    build_ansatz,
    energy_diagonal,
    expectation,
    sample,
    simulate,
)


def random_spin_form(rng, n):
    return QuadraticForm(n, rng.normal(), rng.normal(size=n), np.triu(rng.normal(size=(n, n)), 1),
                         SPIN)


def random_state(rng, n):
    psi = rng.normal(size=1 << n)
    return StateVector(psi / np.linalg.norm(psi))


# ------------------------------------------------------------ layout

def test_block_entanglers_reverse_linear_and_t_shape():
    assert block_entanglers((4, 5, 6, 7)) == [(6, 7), (5, 6), (4, 5)]
    assert block_entanglers((4, 5, 6, 7), "t") == [(5, 7), (5, 6), (4, 5)]
    with pytest.raises(ValueError):
        block_entanglers((0, 1, 2), "t")


def test_vqec_layout_counts():
    spec = build_ansatz(2, 2, scheme="vqec")
    assert spec.n_qubits == 4
    assert spec.layer_plan == ("intra", "inter-asset", "intra")
    assert spec.n_params == 8
    assert spec.inter_time_pairs == ()


def test_vqe_layout_counts():
    spec = build_ansatz(2, 2, 2, "vqe")
    assert spec.n_qubits == 8 and spec.n_params == 24
    assert spec.inter_asset_pairs == ((1, 2), (5, 6))
    assert spec.inter_time_pairs == ((1, 5), (3, 7))


def test_every_qubit_in_one_block():
    spec = build_ansatz(3, 4, 2, "vqe")
    flat = sorted(q for b in spec.blocks for q in b)
    assert flat == list(range(spec.n_qubits))
    for p, q in spec.inter_asset_pairs + spec.inter_time_pairs:
        assert 0 <= p < q < spec.n_qubits


def test_large_layout_refused_but_constructible():
    with pytest.raises(TooManyQubits):
        build_ansatz(9, 4, 4, "vqe")
    spec = build_ansatz(9, 4, 4, "vqe", max_qubits=None)
    assert spec.n_qubits == 144


def test_ansatz_export_declares_conventions(tmp_path):
    build_ansatz(2, 2, 2).save(tmp_path / "a.json")
    d = json.loads((tmp_path / "a.json").read_text())
    assert "little-endian" in d["bit_order"]
    assert d["layer_plan"][1] == "inter-asset"


# ------------------------------------------------------------ simulation

def test_zero_angles_give_ground_state():
    spec = build_ansatz(2, 2, 2)
    psi = simulate(spec, np.zeros(spec.n_params)).amplitudes
    assert psi[0] == 1.0 and np.count_nonzero(psi) == 1


def test_single_qubit_pi_rotation():
    spec = AnsatzSpec(1, ((0,),), ("linear",), (), (), (INTRA,))
    psi = simulate(spec, [math.pi]).amplitudes
    assert abs(abs(psi[1]) - 1) < 1e-15 and abs(psi[0]) < 1e-15


def test_param_length_checked():
    spec = build_ansatz(2, 2, scheme="vqec")
    with pytest.raises(ParamLengthMismatch):
        simulate(spec, np.zeros(7))


@pytest.mark.parametrize("shape", ["linear", "t"])
def test_against_dense_unitary_chain(shape):
    rng = np.random.default_rng(0)
    spec = build_ansatz(1, 4, 1, "vqec", topology={"block_shapes": [shape]})
    for _ in range(5):
        theta = rng.uniform(-2 * np.pi, 2 * np.pi, spec.n_params)
        got = simulate(spec, theta).amplitudes
        assert np.max(np.abs(got - dense_circuit(spec, theta))) <= 1e-12


def test_against_dense_oracle_with_all_phases():
    rng = np.random.default_rng(1)
    spec = build_ansatz(2, 2, 2, "vqe")
    theta = rng.uniform(-2 * np.pi, 2 * np.pi, spec.n_params)
    got = simulate(spec, theta).amplitudes
    assert np.max(np.abs(got - dense_circuit(spec, theta))) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_norm_preserved(seed):
    rng = np.random.default_rng(seed)
    spec = build_ansatz(int(rng.integers(1, 4)), int(rng.integers(1, 4)), 2)
    sv = simulate(spec, rng.uniform(-7, 7, spec.n_params))
    assert abs(sv.norm() - 1) <= 1e-10


def test_product_state_factorizes():
    rng = np.random.default_rng(2)
    full = build_ansatz(2, 2, scheme="vqec", topology={"inter_asset": []})
    theta = rng.uniform(-3, 3, full.n_params)
    psi = simulate(full, theta).amplitudes
    one = build_ansatz(1, 2, scheme="vqec")
    a = simulate(one, theta[[0, 1, 4, 5]]).amplitudes
    b = simulate(one, theta[[2, 3, 6, 7]]).amplitudes
    np.testing.assert_allclose(psi, np.kron(b, a), atol=1e-12)
    # and the expectation of a separable Hamiltonian splits into the two halves
    h = QuadraticForm(4, 0.0, rng.normal(size=4), np.zeros((4, 4)), SPIN)
    ha = QuadraticForm(2, 0.0, h.linear[:2], np.zeros((2, 2)), SPIN)
    hb = QuadraticForm(2, 0.0, h.linear[2:], np.zeros((2, 2)), SPIN)
    total = expectation(StateVector(psi), h)
    split = expectation(StateVector(a), ha) + expectation(StateVector(b), hb)
    assert abs(total - split) <= 1e-10


# ------------------------------------------------------------ expectation

def test_energy_diagonal_matches_evaluate_cost():
    rng = np.random.default_rng(3)
    h = random_spin_form(rng, 5)
    idx = np.arange(32)
    bits = ((idx[:, None] >> np.arange(5)) & 1).astype(np.uint8)
    np.testing.assert_allclose(energy_diagonal(h), evaluate_cost(bits, h), atol=1e-12)


def test_basis_state_expectation():
    h = random_spin_form(np.random.default_rng(4), 3)
    psi = np.zeros(8)
    psi[5] = 1.0  # qubits 0 and 2 set: string "101"
    assert expectation(StateVector(psi), h) == pytest.approx(evaluate_cost("101", h), abs=1e-14)


def test_uniform_single_qubit_z():
    h = QuadraticForm(1, 0.0, [1.0], [[0.0]], SPIN)
    assert abs(expectation(StateVector(np.full(2, 2 ** -0.5)), h)) < 1e-15


def test_expectation_explicit_sum_six_qubits():
    rng = np.random.default_rng(5)
    h = random_spin_form(rng, 6)
    sv = random_state(rng, 6)
    explicit = 0.0
    for b in range(64):
        bits = [(b >> q) & 1 for q in range(6)]
        explicit += sv.amplitudes[b] ** 2 * naive_cost(bits, h)
    assert abs(expectation(sv, h) - explicit) <= 1e-10


def test_expectation_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        expectation(random_state(np.random.default_rng(0), 3), QuadraticForm.zeros(4, SPIN))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_expectation_within_spectrum(seed):
    rng = np.random.default_rng(seed)
    h = random_spin_form(rng, 4)
    d = energy_diagonal(h)
    e = expectation(random_state(rng, 4), h)
    assert d.min() - 1e-12 <= e <= d.max() + 1e-12


# ------------------------------------------------------------ sampling

def test_deterministic_state_samples_identical():
    psi = np.zeros(16)
    psi[6] = 1.0
    ss = sample(StateVector(psi), 1000, seed=1)
    assert ss.entries == {"0110": 1000}


def test_uniform_sampling_chi_square():
    n, shots = 4, 1_000_000
    ss = sample(StateVector(np.full(1 << n, 0.25)), shots, seed=7)
    assert len(ss.counts) == 16 and ss.total == shots
    expected = shots / 16
    chi2 = float(((ss.counts - expected) ** 2 / expected).sum())
    # 15 degrees of freedom: mean 15, sd ~5.5; 5 sd above the mean is ~42
    assert chi2 < 15 + 5 * math.sqrt(30)


def test_readout_noise_single_flip_fraction():
    psi = np.zeros(16)
    psi[0] = 1.0
    ss = sample(StateVector(psi), 1_000_000, noise_p=0.1, seed=11)
    ones = ss.bits.sum(axis=1)
    frac = ss.counts[ones == 1].sum() / ss.total
    assert abs(frac - 4 * 0.1 * 0.9 ** 3) < 0.002


def test_sampling_reproducible():
    sv = random_state(np.random.default_rng(8), 5)
    a, b = sample(sv, 5000, 0.05, seed=3), sample(sv, 5000, 0.05, seed=3)
    np.testing.assert_array_equal(a.bits, b.bits)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_sample_preconditions():
    sv = StateVector(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        sample(sv, 0)
    with pytest.raises(ValueError):
        sample(sv, 10, noise_p=0.5)


def test_sampleset_merges_and_csv_roundtrip(tmp_path):
    ss = SampleSet(np.array([[1, 0], [0, 1], [1, 0]]), [2, 3, 4])
    assert ss.entries == {"01": 3, "10": 6} and ss.total == 9
    ss.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "bitstring,count"
    back = SampleSet.from_csv(tmp_path / "s.csv")
    assert back.entries == ss.entries


def test_best_breaks_ties_lexicographically():
    q = QuadraticForm.zeros(3)
    ss = SampleSet.from_dict({"110": 1, "011": 1, "101": 1})
    bits, cost = ss.best(q)
    assert "".join(map(str, bits)) == "011" and cost == 0.0


def test_circuit_reuse_matches_fresh_simulation():
    spec = build_ansatz(2, 2, 2)
    rng = np.random.default_rng(9)
    c = Circuit(spec)
    for _ in range(3):
        th = rng.uniform(-6, 6, spec.n_params)
        np.testing.assert_array_equal(c.run(th).amplitudes, simulate(spec, th).amplitudes)
    assert INTER_ASSET in spec.layer_plan
