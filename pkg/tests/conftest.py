import numpy as np
import pytest

from vampnet import simulate


def markov_chain(p, n_steps, seed, start=0):
    """Sample a discrete trajectory from transition matrix ``p``."""
    rng = np.random.default_rng(seed)
    cum = np.cumsum(p, axis=1)
    u = rng.random(n_steps - 1)
    out = np.empty(n_steps, dtype=np.int64)
    s = start
    out[0] = s
    for i in range(1, n_steps):
        s = min(int(np.searchsorted(cum[s], u[i - 1], side="right")), len(p) - 1)
        out[i] = s
    return out


P3 = np.array([[0.90, 0.07, 0.03],
               [0.05, 0.90, 0.05],
               [0.02, 0.08, 0.90]])


@pytest.fixture(scope="session")
def chain3():
    return markov_chain(P3, 100_000, seed=7)


@pytest.fixture(scope="session")
def dw_traj():
    cfg = simulate.BDConfig(n_steps=50_000, dt=0.05, seed=1)
    return simulate.bd_trajectory(simulate.Potential.DOUBLE_WELL_1D, cfg)
