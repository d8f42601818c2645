"""Koopman (fuzzy MSM) estimation from fixed features, plus its validation:
implied timescales, Chapman-Kolmogorov test and eigenfunctions."""
from dataclasses import dataclass, field

import numpy as np

from . import numlin, vampscore
from .dataset import Trajectory, lagged_pairs
from .errors import EmptyDatasetError, RankZeroError


@dataclass
class KoopmanModel:
    k_matrix: np.ndarray
    lag: int
    eigenvalues: np.ndarray  # complex, |lambda| descending
    right_eigvecs: np.ndarray  # column i pairs with eigenvalues[i]
    mean0: np.ndarray = None
    mean1: np.ndarray = None


def _fix_phase(vecs):
    """Rotate each eigenvector so that its largest-magnitude entry is real
    and positive (for real vectors: a sign flip)."""
    vecs = vecs.astype(complex)
    for i in range(vecs.shape[1]):
        v = vecs[:, i]
        j = np.argmax(np.abs(v))
        if abs(v[j]) > 0:
            vecs[:, i] = v * (abs(v[j]) / v[j])
    return vecs


def eig_sorted(k_matrix):
    lam, vecs = np.linalg.eig(k_matrix)
    # stable order: modulus descending, ties broken by real part
    order = np.lexsort((-lam.real, -np.abs(lam)))
    lam = lam[order]
    vecs = _fix_phase(vecs[:, order])
    if np.all(np.abs(lam.imag) == 0) and np.all(np.abs(vecs.imag) == 0):
        return lam.real.astype(complex), vecs
    return lam, vecs


def estimate_k(cov, lag=1, eps_rel=numlin.DEFAULT_EPS_REL):
    """``K = C00^+ C01`` from non-mean-free covariances."""
    if cov.mean_free:
        raise ValueError("Koopman estimation expects raw (non-mean-free) covariances")
    try:
        c00i = numlin.pinv_trunc(cov.c00, eps_rel)
    except RankZeroError as exc:
        raise RankZeroError(f"c00 collapsed: {exc}") from exc
    k = c00i @ cov.c01
    lam, vecs = eig_sorted(k)
    # unit second moment of each eigenfunction over the data: r^H C00 r = 1
    norms = np.sqrt(np.abs(np.einsum("ji,jk,ki->i", vecs.conj(), cov.c00, vecs)))
    vecs = vecs / np.where(norms > 0, norms, 1.0)
    return KoopmanModel(k, lag, lam, vecs, cov.mean0, cov.mean1)


def _as_trajs(trajs):
    if isinstance(trajs, (Trajectory, np.ndarray)):
        trajs = [trajs]
    return [t.frames if isinstance(t, Trajectory) else np.asarray(t, float) for t in trajs]


def transformed(transform, trajs):
    """Apply a frozen feature map to every trajectory once."""
    return [np.asarray(transform(f), dtype=np.float64) for f in _as_trajs(trajs)]


def koopman_at_lag(features, lag, eps_rel=numlin.DEFAULT_EPS_REL):
    """Estimate K at ``lag`` from per-trajectory feature arrays ``(T_i, m)``."""
    x, y = [], []
    for f in features:
        if len(f) > lag:
            x.append(f[:-lag])
            y.append(f[lag:])
    if not x:
        raise EmptyDatasetError(f"no trajectory is longer than lag {lag}")
    x = np.concatenate(x)
    y = np.concatenate(y)
    return estimate_k(vampscore.covariances(x.T, y.T, mean_free=False), lag, eps_rel)


def timescales_from_eigenvalues(eigenvalues, lag):
    """``t = -lag / ln|lambda|``; ``inf`` for ``|lambda| >= 1``, ``0`` for ``lambda = 0``."""
    mod = np.abs(np.asarray(eigenvalues))
    out = np.empty(mod.shape)
    with np.errstate(divide="ignore"):
        inside = (mod > 0) & (mod < 1)
        out[inside] = -lag / np.log(mod[inside])
    out[mod >= 1] = np.inf
    out[mod == 0] = 0.0
    return out


@dataclass
class ITSCurve:
    lags: list
    timescales: np.ndarray  # (n_lags, k_eigs)
    eigenvalues: np.ndarray = None
    mean: np.ndarray = None  # filled when summarizing several runs
    lower: np.ndarray = None
    upper: np.ndarray = None


def implied_timescales(transform, trajs, lags, k_eigs=1, eps_rel=numlin.DEFAULT_EPS_REL):
    """Timescales of the ``k_eigs`` slowest nontrivial processes at each lag.

    The transform stays fixed; only K is re-estimated per lag. The first
    (largest-modulus) eigenvalue is the stationary process and is skipped.
    """
    feats = transformed(transform, trajs)
    shortest = min(len(f) for f in feats)
    ts = np.full((len(lags), k_eigs), np.nan)
    ev = np.full((len(lags), k_eigs), np.nan, dtype=complex)
    for i, lag in enumerate(lags):
        if lag >= shortest:
            raise EmptyDatasetError(f"lag {lag} is not shorter than the shortest trajectory ({shortest})")
        lam = koopman_at_lag(feats, lag, eps_rel).eigenvalues[1:1 + k_eigs]
        ev[i, :lam.size] = lam
        ts[i, :lam.size] = timescales_from_eigenvalues(lam, lag)
    return ITSCurve(list(lags), ts, ev)


@dataclass
class CKResult:
    n_values: list
    predicted: list
    estimated: list
    lag: int = 1
    lower: np.ndarray = None  # per-entry percentile bands over runs, if summarized
    upper: np.ndarray = None


def ck_test(transform, trajs, tau, n_values, eps_rel=numlin.DEFAULT_EPS_REL):
    """Compare ``K(tau)^n`` with ``K(n tau)`` for a fixed transform."""
    feats = transformed(transform, trajs)
    shortest = min(len(f) for f in feats)
    if max(n_values) * tau >= shortest:
        raise EmptyDatasetError(f"lag {max(n_values) * tau} leaves no pairs in the shortest trajectory")
    base = koopman_at_lag(feats, tau, eps_rel).k_matrix
    predicted, estimated = [], []
    for n in n_values:
        if n == 1:
            predicted.append(base.copy())
            estimated.append(base.copy())
            continue
        predicted.append(np.linalg.matrix_power(base, n))
        estimated.append(koopman_at_lag(feats, n * tau, eps_rel).k_matrix)
    return CKResult(list(n_values), predicted, estimated, tau)


def eigenfunction_values(model, transform, frames, indices=None):
    """Values of ``psi_i(x) = sum_j r_ij chi_j(x)`` for each frame.

    Returns a ``(T, n)`` array, real when all selected eigenvalues are real.
    """
    chi = np.asarray(transform(frames) if transform is not None else frames, dtype=np.float64)
    r = model.right_eigvecs if indices is None else model.right_eigvecs[:, indices]
    psi = chi @ r
    lam = model.eigenvalues if indices is None else model.eigenvalues[indices]
    if np.all(lam.imag == 0):
        return psi.real
    return psi


def align_states(reference, features):
    """Permutation ``p`` such that ``features[:, p]`` best matches ``reference``.

    Both arrays hold memberships ``(T, m)`` on the same frames; output
    nodes of independently trained networks come in arbitrary order.
    """
    from scipy.optimize import linear_sum_assignment

    overlap = np.asarray(reference).T @ np.asarray(features)
    rows, cols = linear_sum_assignment(-overlap)
    return cols[np.argsort(rows)]


def permute_matrix(k_matrix, perm):
    return k_matrix[np.ix_(perm, perm)]


def percentile_band(stack, ci_level=0.95):
    """Per-entry percentile interval over axis 0 (runs)."""
    a = 100.0 * (1.0 - ci_level) / 2.0
    stack = np.asarray(stack, dtype=np.float64)
    return np.percentile(stack, a, axis=0), np.percentile(stack, 100.0 - a, axis=0)


def ck_agreement(predicted, estimated, ci_level=0.95):
    """Entrywise check that the run bands of ``K(tau)^n`` and ``K(n tau)`` overlap.

    ``predicted``/``estimated`` are stacks ``(runs, n_values, m, m)`` of
    state-aligned matrices. Returns ``(ok, bands)`` where ``ok`` has shape
    ``(n_values, m, m)``.
    """
    plo, phi = percentile_band(predicted, ci_level)
    elo, ehi = percentile_band(estimated, ci_level)
    ok = (plo <= ehi) & (elo <= phi)
    return ok, {"pred_lower": plo, "pred_upper": phi, "est_lower": elo, "est_upper": ehi}


def its_flat(lower, upper):
    """True where one constant timescale fits inside every lag's band.

    ``lower``/``upper`` have shape ``(n_lags, k)``; evaluated per column.
    """
    return np.max(lower, axis=0) <= np.min(upper, axis=0)
