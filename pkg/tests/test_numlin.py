import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vampnet import numlin
from vampnet.errors import DimensionError, NumericalError, RankZeroError


def random_sym(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    return (a + a.T) / 2


def random_psd(n, seed, rank=None):
    b = np.random.default_rng(seed).standard_normal((n, rank or n))
    return b @ b.T


def test_sym_eig_identity():
    e = numlin.sym_eig(np.eye(2))
    np.testing.assert_allclose(e.eigenvalues, [1, 1])


def test_sym_eig_diagonal_descending_axis_vectors():
    e = numlin.sym_eig(np.diag([2.0, 3.0]))
    np.testing.assert_allclose(e.eigenvalues, [3, 2])
    np.testing.assert_allclose(np.abs(e.eigenvectors), [[0, 1], [1, 0]], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_sym_eig_reconstruction_6x6(seed):
    a = random_sym(6, seed)
    e = numlin.sym_eig(a)
    rec = e.eigenvectors @ np.diag(e.eigenvalues) @ e.eigenvectors.T
    assert np.linalg.norm(rec - a) / np.linalg.norm(a) < 1e-10
    np.testing.assert_allclose(e.eigenvectors.T @ e.eigenvectors, np.eye(6), atol=1e-10)
    assert np.all(np.diff(e.eigenvalues) <= 0)


def test_sym_eig_symmetrizes_small_asymmetry():
    a = random_sym(4, 3)
    a[0, 1] += 1e-12
    e = numlin.sym_eig(a)
    rec = e.eigenvectors @ np.diag(e.eigenvalues) @ e.eigenvectors.T
    np.testing.assert_allclose(rec, numlin.symmetrize(a), atol=1e-12)


def test_sym_eig_non_square():
    with pytest.raises(DimensionError):
        numlin.sym_eig(np.zeros((2, 3)))


def test_inv_sqrt_identity():
    np.testing.assert_allclose(numlin.inv_sqrt_trunc(np.eye(3), 1e-12), np.eye(3), atol=1e-15)


def test_inv_sqrt_diagonal():
    np.testing.assert_allclose(numlin.inv_sqrt_trunc(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]))


def test_inv_sqrt_truncation_rank():
    out, rank = numlin.inv_sqrt_trunc(np.diag([4.0, 1e-20]), 1e-12, return_rank=True)
    np.testing.assert_allclose(out, np.diag([0.5, 0.0]), atol=1e-15)
    assert rank == 1


def test_inv_sqrt_all_zero_is_rank_zero():
    with pytest.raises(RankZeroError):
        numlin.inv_sqrt_trunc(np.zeros((3, 3)))


def test_inv_sqrt_rejects_indefinite():
    with pytest.raises(NumericalError):
        numlin.inv_sqrt_trunc(np.diag([1.0, -0.5]))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), rank=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_inv_sqrt_gives_projector(n, rank, seed):
    rank = min(rank, n)
    a = random_psd(n, seed, rank)
    w = numlin.inv_sqrt_trunc(a)
    proj = w @ a @ w
    e = numlin.sym_eig(a)
    q = e.eigenvectors[:, :rank]
    np.testing.assert_allclose(proj, q @ q.T, atol=1e-8)


def test_pinv_trunc_matches_inverse_full_rank():
    a = random_psd(5, 11)
    np.testing.assert_allclose(numlin.pinv_trunc(a), np.linalg.inv(a), rtol=1e-9, atol=1e-9)


def test_svd_diagonal():
    np.testing.assert_allclose(numlin.svd(np.diag([3.0, 1.0])).singular_values, [3, 1])


def test_svd_zero_matrix():
    np.testing.assert_array_equal(numlin.svd(np.zeros((3, 2))).singular_values, [0, 0])


@pytest.mark.parametrize("seed", range(5))
def test_svd_frobenius_identity_and_reconstruction(seed):
    a = np.random.default_rng(seed).standard_normal((5, 4))
    d = numlin.svd(a)
    assert abs(np.sum(a ** 2) - np.sum(d.singular_values ** 2)) < 1e-10
    rec = d.left @ np.diag(d.singular_values) @ d.right.T
    np.testing.assert_allclose(rec, a, atol=1e-10)
    assert np.all(np.diff(d.singular_values) <= 0) and np.all(d.singular_values >= 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_svd_orthogonal_invariance(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((5, 4))
    q1, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    q2, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    s0 = numlin.svd(a).singular_values
    s1 = numlin.svd(q1 @ a @ q2).singular_values
    np.testing.assert_allclose(s0, s1, atol=1e-10)


def test_svd_rejects_non_finite():
    with pytest.raises(NumericalError):
        numlin.svd(np.array([[np.nan, 1.0]]))


def test_frobenius():
    assert numlin.frobenius(np.array([[3.0, 4.0]])) == pytest.approx(5.0)
