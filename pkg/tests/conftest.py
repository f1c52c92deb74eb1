import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from qdpo.market import MarketTensors, load_prices, market_tensors
from qdpo.model import DpoProblem, problem_from_config

DATA = Path(resources.files("qdpo") / "data")


def fixture_problem():
    cfg = json.loads((DATA / "fixture_config.json").read_text())
    ps = load_prices(DATA / cfg["prices"], [a["ticker"] for a in cfg["assets"]])
    tz = market_tensors(ps, cfg["delta_t"], cfg["dims"]["n_t"], cfg["epsilon"], cfg["calendar"])
    return problem_from_config(cfg, tz)


def random_tensors(rng, n_a, n_t, delta_t=28):
    mu = rng.normal(0.01, 0.05, (n_t, n_a))
    sig = np.empty((n_t, n_a, n_a))
    for t in range(n_t):
        L = rng.normal(0, 0.02, (n_a, n_a))
        sig[t] = L @ L.T
    phi = rng.uniform(0.85, 1.15, (n_t, n_a))
    return MarketTensors(mu, sig, phi, 1.0127, delta_t, n_t, ())


def random_problem(rng, n_a=2, n_r=2, n_t=2, omega0=None, **kw):
    m = rng.uniform(0, 0.2, n_a) if kw.pop("lower", True) else np.zeros(n_a)
    b = np.minimum(1.0, m + rng.uniform(0.4, 0.9, n_a))
    if b.sum() < 1:
        b = np.ones(n_a)
    if m.sum() > 1:
        m = m / (2 * m.sum())
    args = dict(nu=rng.uniform(0, 0.05, n_a), gamma=rng.uniform(0, 60), rho=rng.uniform(0.1, 2))
    args.update(kw)
    return DpoProblem(n_a, n_r, n_t, m, b, tensors=random_tensors(rng, n_a, n_t),
                      omega0=omega0, **args)


def all_bits(n):
    idx = np.arange(1 << n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.uint8)


@pytest.fixture(scope="session")
def fixture_dpo():
    return fixture_problem()
