import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import P3, markov_chain
from test_vampscore import analytic_indicator_covariances
from vampnet import baseline, vampscore
from vampnet.dataset import Trajectory
from vampnet.errors import EmptyDatasetError


def ar_process(n, dim, seed, phi=(0.95, 0.5, 0.1)):
    rng = np.random.default_rng(seed)
    phi = np.asarray(phi[:dim])
    x = np.zeros((n, dim))
    e = rng.standard_normal((n, dim))
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def test_tica_1d_single_component():
    m = baseline.tica_fit([Trajectory(ar_process(2000, 1, 0))], 1)
    assert m.retained_dim == 1 and m.components.shape == (1, 1)


def test_tica_white_noise_eigenvalues_small():
    x = np.random.default_rng(0).standard_normal((100_000, 3))
    m = baseline.tica_fit([Trajectory(x)], 1)
    assert np.all(np.abs(m.eigenvalues) < 0.1)


def test_tica_recovers_slow_process_and_cutoff():
    x = ar_process(50_000, 3, 1)
    mix = np.array([[1.0, 0.5, 0.2], [0.3, 1.0, -0.4], [0.0, 0.2, 1.0]])
    m = baseline.tica_fit([Trajectory(x @ mix)], 1, variance_cutoff=1.0)
    assert m.retained_dim == 3
    np.testing.assert_allclose(m.eigenvalues, [0.95, 0.5, 0.1], atol=0.02)
    assert np.all(np.diff(m.eigenvalues) <= 0)
    small = baseline.tica_fit([Trajectory(x @ mix)], 1, variance_cutoff=0.7)
    assert small.retained_dim == 1


def test_tica_projections_uncorrelated():
    x = ar_process(20_000, 3, 2) @ np.array([[1.0, 0.5, 0.2], [0.3, 1.0, -0.4], [0.0, 0.2, 1.0]])
    m = baseline.tica_fit([Trajectory(x)], 2, variance_cutoff=1.0)
    p0 = m.transform(x[:-2])
    p1 = m.transform(x[2:])
    c0 = (p0.T @ p0 + p1.T @ p1) / (2 * len(p0))
    off = c0 - np.diag(np.diag(c0))
    assert np.max(np.abs(off)) < 1e-8
    # kinetic map: variances equal squared eigenvalues
    np.testing.assert_allclose(np.diag(c0), m.eigenvalues ** 2, rtol=1e-8)


def test_tica_lag_too_large():
    with pytest.raises(EmptyDatasetError):
        baseline.tica_fit([Trajectory(np.random.default_rng(0).random((5, 2)))], 5)


def test_kmeans_single_cluster_is_mean():
    pts = np.random.default_rng(0).standard_normal((100, 2))
    c, labels = baseline.kmeans(pts, 1)
    np.testing.assert_allclose(c[0], pts.mean(axis=0))
    assert not labels.any()


def test_kmeans_one_cluster_per_point():
    pts = np.random.default_rng(1).standard_normal((12, 3))
    c, labels = baseline.kmeans(pts, 12)
    np.testing.assert_allclose(c[labels], pts, atol=1e-14)
    assert len(set(labels.tolist())) == 12


def test_kmeans_deterministic_and_separates_blobs():
    rng = np.random.default_rng(2)
    pts = np.vstack([rng.normal(m, 0.1, (200, 2)) for m in (-3, 0, 3)])
    c1, l1 = baseline.kmeans(pts, 3, seed=4)
    c2, l2 = baseline.kmeans(pts, 3, seed=4)
    np.testing.assert_array_equal(l1, l2)
    assert sorted(np.round(c1[:, 0]).tolist()) == [-3, 0, 3]


def test_kmeans_rejects_too_many_clusters():
    with pytest.raises(ValueError):
        baseline.kmeans(np.zeros((5, 1)), 2)


def test_msm_alternating_sequence():
    m = baseline.msm_estimate(np.tile([0, 1], 50), 1)
    np.testing.assert_array_equal(m.transition_matrix, [[0, 1], [1, 0]])


def test_msm_three_state_chain(chain3):
    m = baseline.msm_estimate(chain3, 1)
    counts = m.count_matrix.sum(axis=1)
    assert np.all(np.abs(m.transition_matrix - P3) <= 3 / np.sqrt(counts)[:, None])


@settings(max_examples=30, deadline=None)
@given(seq=st.lists(st.integers(0, 5), min_size=3, max_size=60), tau=st.integers(1, 3))
def test_msm_rows_sum_to_one(seq, tau):
    d = np.array(seq)
    if d.size <= tau:
        return
    m = baseline.msm_estimate(d, tau)
    assert np.all(np.abs(m.transition_matrix.sum(axis=1) - 1) <= 1e-12)
    assert np.all(m.transition_matrix >= 0)


def test_msm_drops_states_never_left():
    d = np.array([0, 1, 0, 1, 0, 2])
    m = baseline.msm_estimate(d, 1)
    np.testing.assert_array_equal(m.active_states, [0, 1])
    assert m.transition_matrix.shape == (2, 2)


def test_indicator_covariances_match_explicit_one_hot(chain3):
    d = chain3[:5000]
    fast = baseline.indicator_covariances(d, 2)
    x = baseline.one_hot(d[:-2], 3).T
    y = baseline.one_hot(d[2:], 3).T
    slow = vampscore.covariances(x, y)
    for a in ("c00", "c01", "c11"):
        np.testing.assert_allclose(getattr(fast, a), getattr(slow, a), atol=1e-14)


def test_msm_vamp2_single_state_is_one():
    assert baseline.msm_vamp2(np.zeros(50, dtype=int), 1) == 1.0


def test_msm_vamp2_matches_analytic(chain3):
    est = baseline.msm_vamp2(chain3, 1)
    exact = vampscore.vamp2_score(analytic_indicator_covariances(P3))
    assert abs(est - exact) < 2 / np.sqrt(chain3.size)


def test_refining_bins_never_lowers_score(dw_traj):
    x = dw_traj.frames[:, 0]
    lo, hi = x.min(), x.max()
    scores = [baseline.msm_vamp2(baseline.uniform_bins(x, n, lo, hi), 1) for n in (2, 4, 8, 16)]
    assert np.all(np.diff(scores) >= -1e-10)
    s2 = baseline.msm_vamp2(baseline.uniform_bins(x, 2, lo, hi), 1)
    s10 = baseline.msm_vamp2(baseline.uniform_bins(x, 10, lo, hi), 1)
    assert s10 >= s2 - 1e-10


def test_uniform_bins():
    d = baseline.uniform_bins(np.array([0.0, 0.49, 0.5, 1.0]), 2, 0.0, 1.0)
    np.testing.assert_array_equal(d, [0, 0, 1, 1])


def test_reference_eigenfunction_double_well(dw_traj):
    x = dw_traj.frames[:, 0]
    vals, ts = baseline.reference_eigenfunction(x, 200, 1)
    assert vals.shape == x.shape and np.all(np.isfinite(vals))
    # the slow process separates the basins
    assert abs(np.corrcoef(vals, np.sign(x))[0, 1]) > 0.95
    assert ts > 50
