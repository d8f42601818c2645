"""Covariance estimation, VAMP scores and their gradients.

Feature batches follow the ``m x T`` convention: row ``i`` holds feature
``i`` evaluated on all ``T`` transition pairs.
"""
from dataclasses import dataclass

import numpy as np

from . import numlin
from .errors import DimensionError, EmptyDatasetError, NumericalError, RankZeroError


@dataclass
class CovarianceSet:
    c00: np.ndarray
    c01: np.ndarray
    c11: np.ndarray
    mean0: np.ndarray
    mean1: np.ndarray
    t_pairs: int
    mean_free: bool

    @property
    def dim(self):
        return self.c00.shape[0]


@dataclass(frozen=True)
class ScoreConfig:
    """How a whitened cross-covariance is turned into a score.

    ``k`` counts singular values of the whitened matrix (the constant
    singular function is not among them; ``include_constant`` adds its
    ``+1`` separately). ``None`` scores all of them.
    """
    k: int = None
    eps_rel: float = numlin.DEFAULT_EPS_REL
    include_constant: bool = True
    frobenius_scaling: str = "sum"

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.frobenius_scaling not in ("sum", "mean"):
            raise ValueError("frobenius_scaling must be 'sum' or 'mean'")


@dataclass
class GradientPair:
    grad_x: np.ndarray
    grad_y: np.ndarray


def _check_batches(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise DimensionError("feature batches must be 2D (m x T)")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"batches hold {x.shape[1]} and {y.shape[1]} pairs")
    return x, y


def covariances(x, y, mean_free=True):
    x, y = _check_batches(x, y)
    t = x.shape[1]
    mean0 = x.mean(axis=1)
    mean1 = y.mean(axis=1)
    if mean_free:
        if t < 2:
            raise EmptyDatasetError("mean-free covariances need at least 2 pairs")
        xb = x - mean0[:, None]
        yb = y - mean1[:, None]
        norm = 1.0 / (t - 1)
    else:
        if t < 1:
            raise EmptyDatasetError("no pairs")
        xb, yb = x, y
        norm = 1.0 / t
    return CovarianceSet(
        c00=norm * (xb @ xb.T),
        c01=norm * (xb @ yb.T),
        c11=norm * (yb @ yb.T),
        mean0=mean0,
        mean1=mean1,
        t_pairs=t,
        mean_free=mean_free,
    )


def _whiten(cov, eps_rel):
    try:
        a = numlin.inv_sqrt_trunc(cov.c00, eps_rel)
    except RankZeroError as exc:
        raise RankZeroError(f"c00 collapsed to rank zero: {exc}") from exc
    try:
        b = numlin.inv_sqrt_trunc(cov.c11, eps_rel)
    except RankZeroError as exc:
        raise RankZeroError(f"c11 collapsed to rank zero: {exc}") from exc
    return a, b


def whitened_svd(cov, cfg=ScoreConfig()):
    """Return ``(A, B, svd(A c01 B))`` with ``A, B`` the truncated
    inverse square roots of ``c00`` and ``c11``."""
    a, b = _whiten(cov, cfg.eps_rel)
    return a, b, numlin.svd(a @ cov.c01 @ b)


def _reduce(sigma, cfg, power):
    k = sigma.size if cfg.k is None else min(cfg.k, sigma.size)
    val = float(np.sum(sigma[:k] ** power))
    if cfg.frobenius_scaling == "mean":
        val /= sigma.size
    return val + (1.0 if cfg.include_constant else 0.0)


def vamp_score(cov, cfg=ScoreConfig(), power=2):
    if power not in (1, 2):
        raise ValueError("power must be 1 (VAMP-1) or 2 (VAMP-2)")
    _, _, dec = whitened_svd(cov, cfg)
    return _reduce(dec.singular_values, cfg, power)


def vamp2_score(cov, cfg=ScoreConfig()):
    return vamp_score(cov, cfg, 2)


def vamp1_score(cov, cfg=ScoreConfig()):
    return vamp_score(cov, cfg, 1)


def vamp2_gradients(xbar, ybar, cov, eps_rel=numlin.DEFAULT_EPS_REL):
    """Closed-form gradient of the full-rank VAMP-2 score.

    Uses the truncated pseudo-inverses of ``c00`` and ``c11`` (the same
    truncation the score applies). ``xbar``/``ybar`` are the centered
    batches the covariances came from.
    """
    xbar, ybar = _check_batches(xbar, ybar)
    m = cov.dim
    if xbar.shape[0] != m or ybar.shape[0] != m or xbar.shape[1] != cov.t_pairs:
        raise DimensionError("batches do not match the covariance set")
    c00i = numlin.pinv_trunc(cov.c00, eps_rel)
    c11i = numlin.pinv_trunc(cov.c11, eps_rel)
    c01 = cov.c01
    f = 2.0 / (cov.t_pairs - 1)
    lead_x = c00i @ c01 @ c11i
    lead_y = c11i @ c01.T @ c00i
    gx = f * lead_x @ (ybar - c01.T @ c00i @ xbar)
    gy = f * lead_y @ (xbar - c01 @ c11i @ ybar)
    # centering Jacobian (I - 11^T/T) on the right
    gx -= gx.mean(axis=1, keepdims=True)
    gy -= gy.mean(axis=1, keepdims=True)
    return GradientPair(gx, gy)


def score_and_gradients(x, y, cfg=ScoreConfig(), power=2):
    """VAMP-``power`` score of raw batches ``x``, ``y`` and its gradient.

    Each scored singular value is the stationary value of
    ``u' C01 v / sqrt(u' C00 u * v' C11 v)``, so its derivative with
    respect to the covariances only involves the whitened singular vectors.
    Valid for any ``k`` as long as ``sigma_k > sigma_{k+1}``.
    """
    x, y = _check_batches(x, y)
    cov = covariances(x, y, mean_free=True)
    a, b, dec = whitened_svd(cov, cfg)
    sigma = dec.singular_values
    score = _reduce(sigma, cfg, power)
    k = sigma.size if cfg.k is None else min(cfg.k, sigma.size)
    s = sigma[:k]
    up = a @ dec.left[:, :k]
    vp = b @ dec.right[:, :k]
    dg = 2.0 * s if power == 2 else np.ones_like(s)
    if cfg.frobenius_scaling == "mean":
        dg = dg / sigma.size
    d01 = (up * dg) @ vp.T
    d00 = -0.5 * (up * (dg * s)) @ up.T
    d11 = -0.5 * (vp * (dg * s)) @ vp.T
    xb = x - cov.mean0[:, None]
    yb = y - cov.mean1[:, None]
    f = 1.0 / (cov.t_pairs - 1)
    gx = f * (2.0 * d00 @ xb + d01 @ yb)
    gy = f * (2.0 * d11 @ yb + d01.T @ xb)
    gx -= gx.mean(axis=1, keepdims=True)
    gy -= gy.mean(axis=1, keepdims=True)
    if not (np.isfinite(score) and np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
        raise NumericalError("non-finite VAMP score or gradient")
    return score, GradientPair(gx, gy)


def validation_score(transform, ds, cfg=ScoreConfig(), indices=None):
    """VAMP-2 score of ``transform`` on held-out pairs.

    ``transform`` maps a ``(T, d)`` frame array to ``(T, m)`` features and
    must be deterministic (no dropout).
    """
    if indices is not None and len(indices) == 0:
        raise EmptyDatasetError("empty validation set")
    if len(ds) == 0:
        raise EmptyDatasetError("empty validation set")
    x = transform(ds.frames0(indices)).T
    y = transform(ds.frames1(indices)).T
    cov = covariances(x, y, mean_free=True)
    if not np.any(cov.c00) and not np.any(cov.c11):
        # a constant transform carries only the constant singular function
        return 1.0 if cfg.include_constant else 0.0
    return vamp2_score(cov, cfg)


def cross_validated_score(train_cov, test_cov, cfg=ScoreConfig(), power=2):
    """Score of singular functions fitted on ``train_cov``, evaluated on ``test_cov``.

    The leading ``k`` singular function pairs are estimated from the training
    covariances; the score is then the ``power``-norm of their re-whitened
    cross-covariance on the test pairs. Unlike scoring test data with its own
    whitening, this does not reward large bases that overfit a small test set.
    """
    if power not in (1, 2):
        raise ValueError("power must be 1 (VAMP-1) or 2 (VAMP-2)")
    a, b, dec = whitened_svd(train_cov, cfg)
    k = dec.singular_values.size if cfg.k is None else min(cfg.k, dec.singular_values.size)
    u = a @ dec.left[:, :k]
    v = b @ dec.right[:, :k]
    sub = CovarianceSet(
        c00=u.T @ test_cov.c00 @ u,
        c01=u.T @ test_cov.c01 @ v,
        c11=v.T @ test_cov.c11 @ v,
        mean0=u.T @ test_cov.mean0,
        mean1=v.T @ test_cov.mean1,
        t_pairs=test_cov.t_pairs,
        mean_free=test_cov.mean_free,
    )
    _, _, sub_dec = whitened_svd(sub, cfg)
    sigma = sub_dec.singular_values
    val = float(np.sum(sigma ** power))
    if cfg.frobenius_scaling == "mean":
        val /= sigma.size
    return val + (1.0 if cfg.include_constant else 0.0)
