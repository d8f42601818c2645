"""Conventional pipeline used as a reference: TICA (kinetic map), k-means,
count-based MSM and the VAMP-2 score of a crisp discretization."""
from dataclasses import dataclass

import numpy as np

from . import numlin, vampscore
from .dataset import Trajectory
from .errors import EmptyDatasetError


@dataclass
class TICAModel:
    mean: np.ndarray
    components: np.ndarray  # columns are TICA eigenvectors
    eigenvalues: np.ndarray
    retained_dim: int
    kinetic_map: bool = True

    def transform(self, frames):
        proj = (np.asarray(frames, float) - self.mean) @ self.components[:, :self.retained_dim]
        if self.kinetic_map:
            proj = proj * self.eigenvalues[:self.retained_dim]
        return proj


def _frames(trajs):
    if isinstance(trajs, (Trajectory, np.ndarray)):
        trajs = [trajs]
    out = []
    for t in trajs:
        f = t.frames if isinstance(t, Trajectory) else np.asarray(t, float)
        out.append(f.reshape(-1, 1) if f.ndim == 1 else f)
    return out


def tica_fit(trajs, tau, variance_cutoff=0.95, kinetic_map=True, eps_rel=numlin.DEFAULT_EPS_REL):
    """TICA from symmetrized time-lagged covariances.

    Keeps the smallest number of components whose share of the summed
    squared eigenvalues reaches ``variance_cutoff``.
    """
    if not 0.0 < variance_cutoff <= 1.0:
        raise ValueError("variance_cutoff must lie in (0, 1]")
    frames = _frames(trajs)
    x = [f[:-tau] for f in frames if len(f) > tau]
    y = [f[tau:] for f in frames if len(f) > tau]
    if not x:
        raise EmptyDatasetError(f"lag {tau} is too large for every trajectory")
    x = np.concatenate(x)
    y = np.concatenate(y)
    mean = 0.5 * (x.mean(axis=0) + y.mean(axis=0))
    xb = x - mean
    yb = y - mean
    n = x.shape[0]
    c0 = (xb.T @ xb + yb.T @ yb) / (2.0 * n)
    ct = (xb.T @ yb + yb.T @ xb) / (2.0 * n)
    w = numlin.inv_sqrt_trunc(c0, eps_rel)
    eig = numlin.sym_eig(w @ ct @ w)
    comps = w @ eig.eigenvectors
    lam = eig.eigenvalues
    keep = np.abs(lam) > 0
    comps, lam = comps[:, keep], lam[keep]
    # the truncated null space of c0 yields exact zero eigenvalues; drop them
    nonnull = np.linalg.norm(comps, axis=0) > 0
    comps, lam = comps[:, nonnull], lam[nonnull]
    if lam.size == 0:
        raise EmptyDatasetError("no TICA component with nonzero eigenvalue")
    share = np.cumsum(lam ** 2) / np.sum(lam ** 2)
    dim = int(np.searchsorted(share, variance_cutoff - 1e-12) + 1)
    dim = min(max(dim, 1), lam.size)
    if variance_cutoff >= 1.0:
        dim = lam.size
    return TICAModel(mean, comps, lam, dim, kinetic_map)


def _farthest_point_init(points, k, rng):
    centers = [points[rng.integers(points.shape[0])]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        i = int(np.argmax(d2))
        centers.append(points[i])
        d2 = np.minimum(d2, np.sum((points - points[i]) ** 2, axis=1))
    return np.array(centers)


def _assign(points, centers):
    d2 = (np.sum(points ** 2, axis=1)[:, None] - 2.0 * points @ centers.T
          + np.sum(centers ** 2, axis=1)[None, :])
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def kmeans(points, k, seed=0, max_iter=100, tol=0.0):
    """Lloyd's algorithm from greedy farthest-point seeding.

    An empty cluster is re-seeded with the point farthest from its
    current center. Returns ``(centers, labels)``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    n_distinct = np.unique(pts, axis=0).shape[0]
    if not 1 <= k <= n_distinct:
        raise ValueError(f"k={k} must lie in [1, {n_distinct}] (number of distinct points)")
    rng = np.random.Generator(np.random.PCG64(seed))
    centers = _farthest_point_init(pts, k, rng)
    labels = None
    for _ in range(max_iter):
        new_labels, dist = _assign(pts, centers)
        counts = np.bincount(new_labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(dist))
            new_labels[far] = c
            dist[far] = 0.0
            counts = np.bincount(new_labels, minlength=k)
        new_centers = np.zeros_like(centers)
        np.add.at(new_centers, new_labels, pts)
        new_centers /= counts[:, None]
        shift = np.max(np.abs(new_centers - centers))
        centers = new_centers
        if labels is not None and np.array_equal(labels, new_labels) and shift <= tol:
            break
        labels = new_labels
    labels, _ = _assign(pts, centers)
    return centers, labels


@dataclass
class MSMModel:
    transition_matrix: np.ndarray
    state_count: int
    lag: int
    active_states: np.ndarray  # original state label of each row
    count_matrix: np.ndarray = None


def _dtrajs(dtrajs):
    if isinstance(dtrajs, np.ndarray) and dtrajs.ndim == 1:
        return [dtrajs.astype(np.int64)]
    return [np.asarray(d, dtype=np.int64) for d in dtrajs]


def count_matrix(dtrajs, tau, n_states=None):
    dtrajs = _dtrajs(dtrajs)
    n = n_states or (max(int(d.max()) for d in dtrajs if d.size) + 1)
    c = np.zeros((n, n))
    for d in dtrajs:
        if d.size > tau:
            np.add.at(c, (d[:-tau], d[tau:]), 1.0)
    return c


def msm_estimate(dtrajs, tau):
    """Row-normalized count matrix; states never seen as a source are dropped.

    Columns of dropped states are removed as well and the rows are
    renormalized over the remaining states.
    """
    c = count_matrix(dtrajs, tau)
    if c.sum() == 0:
        raise EmptyDatasetError(f"no transitions at lag {tau}")
    active = np.flatnonzero(c.sum(axis=1) > 0)
    c_act = c[np.ix_(active, active)]
    rows = c_act.sum(axis=1)
    # a source whose only targets were dropped keeps a self-loop
    dead = rows == 0
    c_act[dead, dead] = 1.0
    rows[dead] = 1.0
    p = c_act / rows[:, None]
    return MSMModel(p, active.size, tau, active, c)


def one_hot(dtraj, n_states):
    out = np.zeros((len(dtraj), n_states))
    out[np.arange(len(dtraj)), dtraj] = 1.0
    return out


def _covariances_from_counts(c):
    t = c.sum()
    if t < 2:
        raise EmptyDatasetError("too few transition pairs")
    n0 = c.sum(axis=1)
    n1 = c.sum(axis=0)
    m0 = n0 / t
    m1 = n1 / t
    f = 1.0 / (t - 1)
    return vampscore.CovarianceSet(
        c00=f * (np.diag(n0) - t * np.outer(m0, m0)),
        c01=f * (c - t * np.outer(m0, m1)),
        c11=f * (np.diag(n1) - t * np.outer(m1, m1)),
        mean0=m0,
        mean1=m1,
        t_pairs=int(t),
        mean_free=True,
    )


def indicator_covariances(dtrajs, tau, n_states=None):
    """Mean-free covariances of one-hot features, assembled from counts.

    Equal to ``vampscore.covariances`` of the explicit indicator matrices
    but never materializes them.
    """
    dtrajs = _dtrajs(dtrajs)
    n = n_states or (max(int(d.max()) for d in dtrajs if d.size) + 1)
    return _covariances_from_counts(count_matrix(dtrajs, tau, n))


def pair_indicator_covariances(states0, states1, n_states):
    """Same as :func:`indicator_covariances` for an explicit set of pairs."""
    c = np.zeros((n_states, n_states))
    np.add.at(c, (np.asarray(states0, np.int64), np.asarray(states1, np.int64)), 1.0)
    return _covariances_from_counts(c)


def msm_vamp2(dtrajs, tau, cfg=vampscore.ScoreConfig()):
    """VAMP-2 score of the indicator features of a crisp discretization."""
    cov = indicator_covariances(dtrajs, tau)
    if not np.any(cov.c00) and not np.any(cov.c11):
        # a single occupied state: only the constant function remains
        return 1.0 if cfg.include_constant else 0.0
    return vampscore.vamp2_score(cov, cfg)


def uniform_bins(values, n_bins, lo=None, hi=None):
    """Discretize 1D ``values`` into ``n_bins`` equal-width bins on ``[lo, hi]``."""
    v = np.asarray(values, float).ravel()
    lo = v.min() if lo is None else lo
    hi = v.max() if hi is None else hi
    edges = np.linspace(lo, hi, n_bins + 1)
    return np.clip(np.searchsorted(edges, v, side="right") - 1, 0, n_bins - 1)


def reference_eigenfunction(coordinate, n_bins, tau, index=1):
    """Fine-grid MSM eigenvector ``index`` mapped back onto every frame.

    ``coordinate`` is a 1D reaction coordinate (x for the double well,
    |x| for the folding model). Returns ``(values_per_frame, timescale)``.
    """
    from .koopman import eig_sorted, timescales_from_eigenvalues

    d = uniform_bins(coordinate, n_bins)
    msm = msm_estimate(d, tau)
    lam, vecs = eig_sorted(msm.transition_matrix)
    lookup = np.full(n_bins, np.nan)
    lookup[msm.active_states] = vecs[:, index].real
    vals = lookup[d]
    # frames in never-left bins (only possible at the very end) borrow a neighbour
    if np.isnan(vals).any():
        good = np.flatnonzero(~np.isnan(lookup))
        fill = lookup[good[np.abs(good[None, :] - np.arange(n_bins)[:, None]).argmin(axis=1)]]
        vals = fill[d]
    ts = timescales_from_eigenvalues(lam[index:index + 1], tau)[0]
    return vals, float(ts)
