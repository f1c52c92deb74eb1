import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_problem
from qdpo.analytics import (
    FinancialReport,
    WeightNormalizer,
    annualized_sharpe,
    efficient_frontier,
    financial_scores,
    marr_per_period,
    normalize_weights,
    normalized_strategy,
    project_capped_simplex,
    project_return_slice,
    return_range,
    scores_from_weights,
    write_report,
)
from qdpo.exceptions import InfeasibleBounds, NotNormalized
from qdpo.model import Strategy


def random_bounds(rng, n):
    m = rng.uniform(0, 1.0 / n, n) * rng.integers(0, 2, n)
    b = np.minimum(1.0, m + rng.uniform(0.05, 1.0, n))
    if b.sum() < 1:
        b = np.minimum(1.0, b * (1.0 / b.sum()) + 1e-9)
        b = np.maximum(b, m)
    return m, b


# ------------------------------------------------------------ normalization

def test_interior_normalized_input_unchanged():
    w = np.array([0.3, 0.7])
    out, it = normalize_weights(w, [0, 0], [1, 1], return_iterations=True)
    assert out is not w and np.array_equal(out, w) and it == 0


def test_single_proportional_rescale():
    np.testing.assert_allclose(normalize_weights([0.6, 0.6], [0, 0], [1, 1]), [0.5, 0.5],
                               atol=1e-15)


def test_clip_then_absorb():
    np.testing.assert_allclose(normalize_weights([0.9, 0.05], [0, 0], [0.5, 1]), [0.5, 0.5],
                               atol=1e-15)


def test_fill_when_all_assets_fixed():
    # both assets clipped to their lower bounds: residual 0.5 split by room (0.8 : 0.7)
    out = normalize_weights([0.0, 0.0], [0.2, 0.3], [1, 1])
    np.testing.assert_allclose(out, [0.2 + 0.5 * 0.8 / 1.5, 0.3 + 0.5 * 0.7 / 1.5], atol=1e-15)


def test_fill_when_free_assets_are_empty():
    out = normalize_weights([0.0, 1.4, 0.7], [0, 0.03, 0], [0.48, 0.71, 0.17])
    assert abs(out.sum() - 1) < 1e-12 and out[0] > 0


def test_infeasible_bounds_rejected():
    with pytest.raises(InfeasibleBounds):
        normalize_weights([0.5, 0.5], [0.6, 0.6], [1, 1])
    with pytest.raises(InfeasibleBounds):
        normalize_weights([0.5, 0.5], [0, 0], [0.4, 0.4])


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalization_feasible_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 10))
    m, b = random_bounds(rng, n)
    if m.sum() > 1 or b.sum() < 1:
        return
    w = rng.uniform(0, 1.5, n) * rng.integers(0, 2, n)
    out = normalize_weights(w, m, b)
    assert abs(out.sum() - 1) <= 1e-9
    assert np.all(out >= m) and np.all(out <= b)
    assert np.array_equal(normalize_weights(out, m, b), out)


def test_transformer_rows():
    X = np.array([[0.6, 0.6], [0.9, 0.05]])
    out = WeightNormalizer(m=[0, 0], b=[0.5, 1]).fit_transform(X)
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


# ------------------------------------------------------------ scores

def test_sharpe_table_rows():
    assert round(annualized_sharpe(0.2262, 0.0559, 0.0172), 2) == 3.74
    assert round(annualized_sharpe(0.1342, 0.0432, 0.0172), 2) == 2.71
    assert round(annualized_sharpe(0.2322, 0.0853, 0.0172), 2) == 2.52
    assert annualized_sharpe(0.1, 0.0) is None


def test_sharpe_rounded_inputs_bracket_reported_value():
    # 21.14% / 4.73% are rounded; the lowest Sharpe they allow still rounds to 4.10
    lo = annualized_sharpe(0.21135, 0.04735, 0.0172)
    hi = annualized_sharpe(0.21145, 0.04725, 0.0172)
    assert lo <= 4.1 + 0.005 and hi >= 4.1


def test_marr_value():
    assert marr_per_period(28) == pytest.approx(0.2204 * 28 / 365, rel=1e-15)
    assert round(100 * marr_per_period(28), 2) == 1.69


def test_zero_weights_have_no_sharpe():
    p = random_problem(np.random.default_rng(0), n_a=2, n_t=3, lower=False, nu=np.zeros(2))
    rep = scores_from_weights(np.zeros((3, 2)), p)
    assert rep.ann_eff_return == 0 and rep.ann_volatility == 0 and rep.ann_sharpe is None


def test_scores_by_hand():
    p = random_problem(np.random.default_rng(1), n_a=2, n_t=2)
    w = np.array([[0.5, 0.5], [0.3, 0.7]])
    w = np.array([normalize_weights(r, p.m, p.b) for r in w])
    rep = financial_scores(Strategy(w, normalized=True), p)
    tz = p.tensors
    F = sum(tz.mu[t] @ w[t] for t in range(2))
    R = sum(w[t] @ tz.sigma[t] @ w[t] for t in range(2))
    prev = [p.omega0, w[0]]
    C = sum(np.sum(p.nu * p.lambdas[t] * (w[t] - tz.phi[t] * prev[t]) ** 2) for t in range(2))
    dt = tz.delta_t
    assert rep.ann_eff_return == pytest.approx((F - C) * 365 / (2 * dt), rel=1e-12)
    vol = math.sqrt(365 / (dt * 2)) * math.sqrt(dt * R)
    assert rep.ann_volatility == pytest.approx(vol, rel=1e-12)
    assert rep.ann_sharpe == pytest.approx((rep.ann_eff_return - 0.0172) / vol, rel=1e-12)
    assert rep.passes_marr == all(x >= rep.marr for x in rep.period_eff_return)


def test_scores_need_normalized_strategy():
    p = random_problem(np.random.default_rng(2), n_a=2, n_t=1)
    with pytest.raises(NotNormalized):
        financial_scores(Strategy(np.array([[0.9, 0.9]])), p)
    s = normalized_strategy(Strategy(np.array([[0.9, 0.9]])), p)
    assert isinstance(financial_scores(s, p), FinancialReport)


def test_write_report(tmp_path):
    p = random_problem(np.random.default_rng(3), n_a=2, n_t=1)
    rep = scores_from_weights(np.array([[0.5, 0.5]]), p)
    write_report(rep, tmp_path / "r.json")
    assert '"ann_sharpe"' in (tmp_path / "r.json").read_text()


# ------------------------------------------------------------ frontier

def test_projection_onto_capped_simplex():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n = int(rng.integers(2, 7))
        m, b = random_bounds(rng, n)
        if m.sum() > 1 or b.sum() < 1:
            continue
        v = rng.normal(size=n)
        w = project_capped_simplex(v, m, b)
        assert abs(w.sum() - 1) < 1e-12 and np.all(w >= m) and np.all(w <= b)
        # no random feasible point is closer to v
        for _ in range(20):
            z = normalize_weights(rng.uniform(0, 1, n), m, b)
            assert np.linalg.norm(v - w) <= np.linalg.norm(v - z) + 1e-12


def test_return_range_greedy():
    lo, hi, w_lo, w_hi = return_range(np.array([0.1, 0.3, 0.2]), np.zeros(3), np.full(3, 0.6))
    assert hi == pytest.approx(0.6 * 0.3 + 0.4 * 0.2)
    assert lo == pytest.approx(0.6 * 0.1 + 0.4 * 0.2)


def test_symmetric_minimum_variance():
    pts, ws = efficient_frontier([0.1, 0.1], np.eye(2) * 0.04, [0, 0], [1, 1],
                                 return_weights=True)
    assert len(pts) == 1
    np.testing.assert_allclose(ws[0], [0.5, 0.5], atol=1e-6)
    assert pts[0][0] ** 2 == pytest.approx(0.02, rel=1e-6)


def test_single_asset_degenerates():
    pts = efficient_frontier([0.07], [[0.09]], [0.0], [1.0])
    assert pts == [(0.3, 0.07)]


def test_frontier_sorted_and_convex():
    rng = np.random.default_rng(5)
    L = rng.normal(size=(4, 4)) * 0.1
    pts = efficient_frontier(rng.normal(0.05, 0.05, 4), L @ L.T, np.zeros(4), np.ones(4))
    ret = np.array([r for _, r in pts])
    var = np.array([v ** 2 for v, _ in pts])
    assert np.all(np.diff(ret) > 0)
    assert np.all(np.diff(var) >= -1e-9)
    # second differences of variance on an evenly spaced return grid are non-negative
    assert np.all(np.diff(var, 2) >= -1e-8)


def test_frontier_beats_random_portfolios():
    rng = np.random.default_rng(6)
    n = 3
    L = rng.normal(size=(n, n)) * 0.1
    S = L @ L.T
    mu = rng.normal(0.05, 0.05, n)
    m, b = np.zeros(n), np.ones(n)
    pts = efficient_frontier(mu, S, m, b)
    fr_ret = np.array([r for _, r in pts])
    fr_var = np.array([v ** 2 for v, _ in pts])
    W = rng.dirichlet(np.ones(n), 100_000)
    r = W @ mu
    v = np.einsum("ij,jk,ik->i", W, S, W)
    bound = np.where(r < fr_ret[0], fr_var[0], np.interp(r, fr_ret, fr_var))
    assert np.all(v >= bound - 1e-4)


def test_projection_onto_return_slice():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        m, b = random_bounds(rng, n)
        if m.sum() > 1 or b.sum() < 1:
            continue
        R = rng.normal(size=n)
        lo, hi, _, _ = return_range(R, m, b)
        r = rng.uniform(lo, hi)
        v = rng.normal(size=n)
        w = project_return_slice(v, R, r, m, b)
        assert abs(w.sum() - 1) < 1e-12 and abs(R @ w - r) < 1e-11
        assert np.all(w >= m) and np.all(w <= b)
        # pull random slice points toward w: distance to v never drops below the projection
        for _ in range(10):
            z = project_return_slice(rng.normal(size=n), R, r, m, b)
            for s in (0.1, 0.5, 1.0):
                y = w + s * (z - w)
                assert np.linalg.norm(v - w) <= np.linalg.norm(v - y) + 1e-10
