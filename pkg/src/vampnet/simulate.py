"""Over-damped Langevin (Brownian) dynamics in the two toy potentials.

Integration is forward Euler::

    x[t+1] = x[t] - dt * grad U(x[t]) / kT + sqrt(2 dt D) * w[t]

with ``w`` drawn from numpy's PCG64 bit generator (``standard_normal``,
ziggurat method), so a seed fixes the trajectory on every platform.
"""
import enum
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Trajectory
from .errors import DimensionError, DivergenceError


class Potential(enum.Enum):
    DOUBLE_WELL_1D = "doublewell"
    RADIAL_FOLDING_5D = "folding5d"

    @property
    def dim(self):
        return 1 if self is Potential.DOUBLE_WELL_1D else 5


def _check_dim(spec, x):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (spec.dim,):
        raise DimensionError(f"{spec.value} needs a {spec.dim}-vector, got shape {x.shape}")
    return x


def _folding_u(r):
    s = r - 3.0
    if r < 3.0:
        return -2.5 * s * s
    return 0.5 * s ** 3 - s * s


def _folding_du(r):
    s = r - 3.0
    if r < 3.0:
        return -5.0 * s
    return 1.5 * s * s - 2.0 * s


def _folding_grad(x):
    r = math.sqrt(float(x @ x))
    if r == 0.0:
        return np.zeros_like(x)
    return _folding_du(r) / r * x


def potential_energy(spec, x):
    x = _check_dim(spec, x)
    if spec is Potential.DOUBLE_WELL_1D:
        v = x[0]
        return v ** 4 - 6.0 * v ** 2 + 2.0 * v
    return _folding_u(math.sqrt(float(x @ x)))


def potential_gradient(spec, x):
    x = _check_dim(spec, x)
    if spec is Potential.DOUBLE_WELL_1D:
        v = x[0]
        return np.array([4.0 * v ** 3 - 12.0 * v + 2.0])
    return _folding_grad(x)


def default_x0(spec):
    if spec is Potential.DOUBLE_WELL_1D:
        return np.array([-1.7])
    x0 = np.zeros(5)
    x0[0] = 3.0
    return x0


@dataclass
class BDConfig:
    n_steps: int
    dt: float = 0.05
    diffusion: float = 1.0
    kT: float = 1.0
    x0: np.ndarray = None
    seed: int = 0
    burn_in: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.diffusion <= 0 or self.kT <= 0:
            raise ValueError("diffusion and kT must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")


def bd_step(spec, x, dt, diffusion, kT, w):
    """One Euler step with an explicitly supplied noise vector ``w``."""
    x = _check_dim(spec, x)
    return x - dt * potential_gradient(spec, x) / kT + math.sqrt(2.0 * dt * diffusion) * np.asarray(w, float)


def integrate(gradient, x0, n_frames, dt, diffusion=1.0, kT=1.0, rng=None, noise=None):
    """Integrate Brownian dynamics for an arbitrary ``gradient(x)`` callable.

    Returns an ``(n_frames, dim)`` array whose first row is ``x0``. Either a
    seeded ``rng`` or a precomputed ``noise`` array of shape
    ``(n_frames - 1, dim)`` must be given.
    """
    x = np.array(x0, dtype=np.float64, ndmin=1)
    dim = x.size
    if noise is None:
        noise = rng.standard_normal((n_frames - 1, dim))
    kick = math.sqrt(2.0 * dt * diffusion) * noise
    a = dt / kT
    out = np.empty((n_frames, dim))
    out[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n_frames):
            x = x - a * gradient(x) + kick[i - 1]
            out[i] = x
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)))
    return out


def _double_well_fast(x0, n_frames, dt, diffusion, kT, noise):
    # scalar loop; roughly 10x faster than going through numpy per step
    s = math.sqrt(2.0 * dt * diffusion)
    a = dt / kT
    w = (s * noise[:, 0]).tolist()
    out = [0.0] * n_frames
    x = float(x0[0])
    out[0] = x
    try:
        for i in range(1, n_frames):
            x = x - a * (4.0 * x * x * x - 12.0 * x + 2.0) + w[i - 1]
            out[i] = x
    except OverflowError:
        raise DivergenceError(i) from None
    arr = np.array(out).reshape(-1, 1)
    bad = ~np.isfinite(arr[:, 0])
    if bad.any():
        raise DivergenceError(int(np.argmax(bad)))
    return arr


def bd_trajectory(spec, cfg):
    """Simulate ``cfg.n_steps`` frames (the first being ``x0`` unless a
    burn-in is requested) in the potential ``spec``."""
    x0 = default_x0(spec) if cfg.x0 is None else _check_dim(spec, cfg.x0)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    total = cfg.n_steps + cfg.burn_in
    noise = rng.standard_normal((total - 1, spec.dim))
    if spec is Potential.DOUBLE_WELL_1D:
        frames = _double_well_fast(x0, total, cfg.dt, cfg.diffusion, cfg.kT, noise)
    else:
        frames = integrate(_folding_grad, x0, total, cfg.dt,
                           cfg.diffusion, cfg.kT, noise=noise)
    return Trajectory(frames[cfg.burn_in:], dt_per_frame=cfg.dt, label=spec.value)
