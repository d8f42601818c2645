"""Trajectories on disk, lagged transition pairs, splitting and featurization."""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, ParseError

MAGIC = b"VTRJ1"
_HEADER = struct.Struct("<5sIId")


@dataclass
class Trajectory:
    frames: np.ndarray
    dt_per_frame: float = 1.0
    label: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim == 1:
            f = f.reshape(-1, 1)
        if f.ndim != 2:
            raise ValueError(f"frames must be a T x d matrix, got shape {f.shape}")
        if f.shape[0] < 2:
            raise ValueError("a trajectory needs at least 2 frames")
        if not np.all(np.isfinite(f)):
            raise ValueError("trajectory contains non-finite values")
        self.frames = f

    def __len__(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


def write_trajectory(traj, path, format="binary"):
    path = Path(path)
    if format == "binary":
        t, d = traj.frames.shape
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, t, d, float(traj.dt_per_frame)))
            fh.write(np.ascontiguousarray(traj.frames, dtype="<f8").tobytes())
    elif format == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# dt_per_frame={traj.dt_per_frame!r} label={traj.label}\n")
            for row in traj.frames:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValueError(f"unknown trajectory format {format!r}")


def _read_binary(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: file too short for VTRJ1 header ({len(data)} bytes)")
    magic, t, d, dt = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r} at offset 0")
    expected = _HEADER.size + 8 * t * d
    if len(data) != expected:
        raise ParseError(f"{path}: expected {expected} bytes for T={t}, d={d}, found {len(data)}")
    frames = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(t, d).astype(np.float64)
    bad = np.argwhere(~np.isfinite(frames))
    if bad.size:
        i, j = bad[0]
        raise ParseError(f"{path}: non-finite value at frame {i}, column {j} "
                         f"(offset {_HEADER.size + 8 * (i * d + j)})")
    return frames, dt


def _read_csv(path):
    rows = []
    width = None
    dt = 1.0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("dt_per_frame="):
                        dt = float(tok.split("=", 1)[1])
                continue
            try:
                vals = [float(v) for v in line.split(",")]
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: not a comma-separated float row") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(f"{path}: line {lineno}: expected {width} columns, got {len(vals)}")
            if not all(np.isfinite(vals)):
                raise ParseError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no frames")
    return np.array(rows), dt


def read_trajectory(path, format="binary"):
    if format == "binary":
        frames, dt = _read_binary(path)
    elif format == "csv":
        frames, dt = _read_csv(path)
    else:
        raise ValueError(f"unknown trajectory format {format!r}")
    if frames.shape[0] < 2:
        raise ParseError(f"{path}: a trajectory needs at least 2 frames, found {frames.shape[0]}")
    return Trajectory(frames, dt_per_frame=dt, label=Path(path).stem)


@dataclass
class LaggedDataset:
    """Transition pairs ``(x_t, x_{t+lag})`` that never cross trajectory ends.

    ``traj_index[i]`` and ``time_index[i]`` locate the first member of
    pair ``i``; the second member sits ``lag`` frames later.
    """
    trajs: list
    lag: int
    traj_index: np.ndarray
    time_index: np.ndarray

    @property
    def n_pairs(self):
        return int(self.traj_index.size)

    def __len__(self):
        return self.n_pairs

    def frames0(self, idx=None):
        return self._gather(0, idx)

    def frames1(self, idx=None):
        return self._gather(self.lag, idx)

    def _gather(self, shift, idx):
        ti = self.traj_index if idx is None else self.traj_index[idx]
        tt = self.time_index if idx is None else self.time_index[idx]
        out = np.empty((ti.size, self.trajs[0].dim))
        for k, traj in enumerate(self.trajs):
            sel = ti == k
            out[sel] = traj.frames[tt[sel] + shift]
        return out


def lagged_pairs(trajs, tau):
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    tau = int(tau)
    if tau < 1:
        raise ValueError("lag must be >= 1")
    dims = {t.dim for t in trajs}
    if len(dims) > 1:
        raise ValueError(f"trajectories have differing dimensions {sorted(dims)}")
    ti, tt = [], []
    for k, traj in enumerate(trajs):
        n = max(0, len(traj) - tau)
        ti.append(np.full(n, k, dtype=np.int64))
        tt.append(np.arange(n, dtype=np.int64))
    traj_index = np.concatenate(ti) if ti else np.empty(0, np.int64)
    if traj_index.size == 0:
        raise EmptyDatasetError(f"lag {tau} is not shorter than any trajectory")
    return LaggedDataset(list(trajs), tau, traj_index, np.concatenate(tt))


@dataclass
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    seed: int
    fraction: float


def split(ds, fraction=0.1, seed=0):
    """Random pair-level split; ``fraction`` is the validation share."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n = len(ds) if not isinstance(ds, (int, np.integer)) else int(ds)
    n_val = int(round(fraction * n))
    if n_val == 0 or n_val == n:
        raise EmptyDatasetError(f"fraction {fraction} of {n} pairs leaves an empty set")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    return SplitIndices(np.sort(perm[n_val:]), np.sort(perm[:n_val]), seed, fraction)


def iter_batches(indices, batch_size, rng):
    """Shuffle ``indices`` and yield consecutive batches; the last one may be short."""
    idx = np.asarray(indices)[rng.permutation(len(indices))]
    for start in range(0, idx.size, batch_size):
        yield idx[start:start + batch_size]


def contact_transform(distances):
    d = np.asarray(distances, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    return np.exp(-d)


def remove_mean(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    mean = x.mean(axis=0)
    return mean, x - mean
