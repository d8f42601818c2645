"""Feed-forward VAMPnet lobe (ReLU hidden layers, Softmax output) and its trainer.

Both lobes share one parameter set, so a training step back-propagates
the score gradient of the ``x_t`` batch and of the ``x_{t+tau}`` batch
through the same network and sums the two parameter gradients.
"""
import copy
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import vampscore
from .dataset import iter_batches
from .errors import DimensionError, NumericalError, ParseError, VampnetError

log = logging.getLogger(__name__)


@dataclass
class Topology:
    layer_sizes: list
    dropout_rates: list = None  # one per hidden layer

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ValueError("a topology needs at least an input and an output layer")
        if min(self.layer_sizes) < 1:
            raise ValueError("layer sizes must be >= 1")
        n_hidden = len(self.layer_sizes) - 2
        if self.dropout_rates is None:
            self.dropout_rates = [0.0] * n_hidden
        self.dropout_rates = [float(p) for p in self.dropout_rates]
        if len(self.dropout_rates) != n_hidden:
            raise ValueError(f"need {n_hidden} dropout rates, got {len(self.dropout_rates)}")
        if any(not 0.0 <= p < 1.0 for p in self.dropout_rates):
            raise ValueError("dropout rates must lie in [0, 1)")

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]


def default_dropout(n_hidden, rate=0.1, n_layers=2):
    return [rate if i < n_layers else 0.0 for i in range(n_hidden)]


def build_topology(n_in, n_out, depth=None, explicit=None, dropout=0.1, dropout_layers=2):
    """Layer sizes shrinking by the constant factor ``(n_in/n_out)**(1/depth)``.

    ``depth`` counts layers after the input. An ``explicit`` size list
    bypasses the rule.
    """
    if explicit is not None:
        sizes = list(explicit)
        if len(sizes) < 2:
            raise ValueError("explicit topology needs at least 2 layers")
    else:
        if depth is None or depth < 1:
            raise ValueError("depth must be >= 1")
        if not n_in >= n_out >= 1:
            raise ValueError("rule-based sizing needs n_in >= n_out >= 1")
        ratio = (n_in / n_out) ** (1.0 / depth)
        sizes = [int(n_in)]
        for _ in range(depth - 1):
            sizes.append(max(1, int(math.floor(sizes[-1] / ratio + 0.5))))
        sizes.append(int(n_out))
    return Topology(sizes, default_dropout(len(sizes) - 2, dropout, dropout_layers))


@dataclass
class NetworkModel:
    topology: Topology
    weights: list  # weights[l] has shape (n_l, n_{l+1})
    biases: list
    rng_seed: int = 0
    input_shift0: np.ndarray = None
    input_shift1: np.ndarray = None

    @classmethod
    def initialize(cls, topology, seed=0, rng=None):
        """Fan-in scaled uniform init: variance 2/fan_in for ReLU layers,
        1/fan_in for the Softmax layer. Biases start at zero."""
        rng = rng or np.random.Generator(np.random.PCG64(seed))
        sizes = topology.layer_sizes
        weights, biases = [], []
        for l in range(len(sizes) - 1):
            fan_in = sizes[l]
            var = (1.0 if l == len(sizes) - 2 else 2.0) / fan_in
            a = math.sqrt(3.0 * var)
            weights.append(rng.uniform(-a, a, size=(sizes[l], sizes[l + 1])))
            biases.append(np.zeros(sizes[l + 1]))
        zeros = np.zeros(topology.n_in)
        return cls(topology, weights, biases, seed, zeros, zeros.copy())

    @property
    def params(self):
        return self.weights + self.biases

    def copy(self):
        return copy.deepcopy(self)

    def transform(self, frames, lobe=0):
        """Deterministic features of raw frames, shape ``(T, n_out)``."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 1:
            frames = frames.reshape(-1, 1) if self.topology.n_in == 1 else frames.reshape(1, -1)
        shift = self.input_shift0 if lobe == 0 else self.input_shift1
        return forward(self, frames - shift)

    __call__ = transform


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model, batch, mode="infer", rng=None, return_cache=False):
    """Network output for an already-shifted input batch.

    ``mode="train"`` applies inverted dropout with masks drawn from ``rng``.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.topology.n_in:
        raise DimensionError(f"expected input width {model.topology.n_in}, got shape {x.shape}")
    train = mode == "train"
    if train and rng is None:
        raise ValueError("train mode needs a dropout rng")
    acts = [x]
    masks = []
    n_layers = len(model.weights)
    h = x
    for l in range(n_layers - 1):
        z = h @ model.weights[l] + model.biases[l]
        h = np.maximum(z, 0.0)
        p = model.topology.dropout_rates[l]
        mask = None
        if train and p > 0.0:
            mask = (rng.random(h.shape) >= p) / (1.0 - p)
            h = h * mask
        masks.append(mask)
        acts.append(h)
    out = _softmax(h @ model.weights[-1] + model.biases[-1])
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite network activations")
    if return_cache:
        return out, {"acts": acts, "masks": masks, "out": out}
    return out


def l2_penalty(model, l2_hidden, l2_output):
    hidden = sum(float(np.sum(w * w)) for w in model.weights[:-1])
    return l2_hidden * hidden + l2_output * float(np.sum(model.weights[-1] ** 2))


def _backprop(model, cache, g_out):
    """Parameter gradients for dLoss/dOutput = ``g_out`` (shape T x n_out)."""
    s = cache["out"]
    delta = s * (g_out - np.sum(g_out * s, axis=1, keepdims=True))
    acts, masks = cache["acts"], cache["masks"]
    n_layers = len(model.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l == 0:
            break
        delta = delta @ model.weights[l].T
        if masks[l - 1] is not None:
            delta = delta * masks[l - 1]
        delta = delta * (acts[l] > 0.0)
    return gw, gb


def backward(model, cache_t, cache_tau, upstream, l2_hidden=0.0, l2_output=0.0):
    """Gradient of ``-score + L2`` with respect to all parameters.

    ``upstream`` holds the score gradients (``m x T``) with respect to the
    two lobes' outputs; the lobes are clones, so both contributions are
    summed. Returns a list aligned with ``model.params``.
    """
    gx = np.asarray(upstream.grad_x)
    gy = np.asarray(upstream.grad_y)
    if gx.shape != cache_t["out"].T.shape or gy.shape != cache_tau["out"].T.shape:
        raise DimensionError("upstream gradients do not match the cached outputs")
    gw0, gb0 = _backprop(model, cache_t, -gx.T)
    gw1, gb1 = _backprop(model, cache_tau, -gy.T)
    n_layers = len(model.weights)
    gw = []
    for l in range(n_layers):
        lam = l2_output if l == n_layers - 1 else l2_hidden
        gw.append(gw0[l] + gw1[l] + 2.0 * lam * model.weights[l])
    gb = [a + b for a, b in zip(gb0, gb1)]
    return gw + gb


def objective(model, x_t, x_tau, cfg=vampscore.ScoreConfig(), power=2, l2_hidden=0.0, l2_output=0.0):
    """Training loss ``-score + L2`` in inference mode (used for gradient checks)."""
    y0 = forward(model, x_t)
    y1 = forward(model, x_tau)
    cov = vampscore.covariances(y0.T, y1.T)
    return -vampscore.vamp_score(cov, cfg, power) + l2_penalty(model, l2_hidden, l2_output)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update, applied in place to ``params``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    lag: int = 1
    batch_size: int = 4000
    epochs: int = 100
    lr0: float = 0.05
    lr_patience: int = 10
    lr_decay: float = 10.0
    l2_hidden: float = 1e-7
    l2_output: float = 1e-8
    pretrain_fraction: float = 1.0 / 3.0
    k: int = None
    seed: int = 0
    schedule_unit: str = "epoch"
    center_inputs: bool = True
    eps_rel: float = 1e-10

    def __post_init__(self):
        if self.batch_size < 2 or self.epochs < 1 or self.lag < 1:
            raise ValueError("batch_size >= 2, epochs >= 1 and lag >= 1 required")
        if not self.lr0 > 0 or self.lr_patience < 1 or not self.lr_decay > 0:
            raise ValueError("lr0, lr_patience and lr_decay must be positive")
        if not 0.0 <= self.pretrain_fraction <= 1.0:
            raise ValueError("pretrain_fraction must lie in [0, 1]")
        if self.schedule_unit not in ("epoch", "batch"):
            raise ValueError("schedule_unit must be 'epoch' or 'batch'")

    @property
    def score_config(self):
        return vampscore.ScoreConfig(k=self.k, eps_rel=self.eps_rel)


@dataclass
class TrainReport:
    train_scores: list = field(default_factory=list)  # epoch-mean batch VAMP-2
    val_scores: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)  # rate in force after each epoch's check
    events: list = field(default_factory=list)
    best_epoch: int = -1
    final_val_score: float = float("nan")
    wall_time: float = 0.0
    diverged: bool = False
    completed: bool = False


def train(ds, split, topo, cfg):
    """Train a VAMPnet on ``ds`` and return ``(best_model, report)``.

    The first ``pretrain_fraction`` of epochs maximize VAMP-1, the rest
    VAMP-2. The learning rate drops by ``lr_decay`` whenever the validation
    VAMP-2 score has not improved for ``lr_patience`` checks. The returned
    parameters are those with the best validation score.
    """
    if len(split.train) < 2 or len(split.validation) < 2:
        raise ValueError("training and validation sets need at least 2 pairs each")
    t0 = time.perf_counter()
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, shuffle_ss, drop_ss = ss.spawn(3)
    model = NetworkModel.initialize(topo, rng=np.random.Generator(np.random.PCG64(init_ss)))
    model.rng_seed = cfg.seed
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))
    drop_rng = np.random.Generator(np.random.PCG64(drop_ss))

    x0_all = ds.frames0()
    x1_all = ds.frames1()
    if x0_all.shape[1] != topo.n_in:
        raise DimensionError(f"data has {x0_all.shape[1]} columns, network expects {topo.n_in}")
    if cfg.center_inputs:
        model.input_shift0 = x0_all[split.train].mean(axis=0)
        model.input_shift1 = x1_all[split.train].mean(axis=0)
    x0_all = x0_all - model.input_shift0
    x1_all = x1_all - model.input_shift1
    v0 = x0_all[split.validation]
    v1 = x1_all[split.validation]
    score_cfg = cfg.score_config

    def val_score(power):
        y0 = forward(model, v0)
        y1 = forward(model, v1)
        return vampscore.vamp_score(vampscore.covariances(y0.T, y1.T), score_cfg, power)

    state = AdamState.zeros_like(model.params)
    lr = cfg.lr0
    n_pre = int(round(cfg.pretrain_fraction * cfg.epochs))
    report = TrainReport()
    best_model = model.copy()
    best = -np.inf  # best VAMP-2 validation score, drives checkpointing
    sched_best = -np.inf  # best validation value of the objective in force
    stale = 0

    def check(epoch, power):
        nonlocal best, best_model, stale, lr, sched_best
        v2 = val_score(2)
        monitored = v2 if power == 2 else val_score(1)
        # checkpoints come from the VAMP-2 phase unless there is none
        if (power == 2 or n_pre >= cfg.epochs) and v2 > best:
            best = v2
            best_model = model.copy()
            report.best_epoch = epoch
        if monitored > sched_best:
            sched_best, stale = monitored, 0
        else:
            stale += 1
            if stale >= cfg.lr_patience:
                lr /= cfg.lr_decay
                stale = 0
                report.events.append({"epoch": epoch, "event": "lr_decay", "lr": lr})
        return v2

    try:
        for epoch in range(cfg.epochs):
            power = 1 if epoch < n_pre else 2
            if epoch == n_pre and n_pre > 0:
                report.events.append({"epoch": epoch, "event": "switch_to_vamp2"})
                sched_best, stale = -np.inf, 0
            batch_scores = []
            v = None
            for idx in iter_batches(split.train, cfg.batch_size, shuffle_rng):
                if idx.size < 2:
                    continue
                y0, c0 = forward(model, x0_all[idx], "train", drop_rng, return_cache=True)
                y1, c1 = forward(model, x1_all[idx], "train", drop_rng, return_cache=True)
                score, up = vampscore.score_and_gradients(y0.T, y1.T, score_cfg, power)
                if power == 2:
                    batch_scores.append(score)
                else:
                    batch_scores.append(vampscore.vamp2_score(vampscore.covariances(y0.T, y1.T), score_cfg))
                grads = backward(model, c0, c1, up, cfg.l2_hidden, cfg.l2_output)
                if not all(np.all(np.isfinite(g)) for g in grads):
                    raise NumericalError("non-finite parameter gradient")
                adam_step(model.params, grads, state, lr)
                if cfg.schedule_unit == "batch":
                    v = check(epoch, power)
            if cfg.schedule_unit == "epoch":
                v = check(epoch, power)
            report.train_scores.append(float(np.mean(batch_scores)))
            report.val_scores.append(float(v))
            report.learning_rates.append(lr)
            if not np.isfinite(v):
                raise NumericalError("non-finite validation score")
        report.completed = True
    except (NumericalError, VampnetError, FloatingPointError) as exc:
        log.warning("training aborted at epoch %d: %s", len(report.val_scores), exc)
        report.diverged = True
        report.events.append({"epoch": len(report.val_scores), "event": "diverged", "reason": str(exc)})
    report.final_val_score = float(best)
    report.wall_time = time.perf_counter() - t0
    return best_model, report


# checkpoint format: b"VNET1", u32 n_layers, u32 sizes[n_layers], u64 seed,
# f64 dropout[n_layers-2], f64 shift0[n_in], f64 shift1[n_in],
# then for each layer W (row-major, n_l x n_{l+1}) followed by b; all little-endian.
CKPT_MAGIC = b"VNET1"


def save_checkpoint(model, path):
    sizes = model.topology.layer_sizes
    parts = [CKPT_MAGIC, struct.pack("<I", len(sizes)), struct.pack(f"<{len(sizes)}I", *sizes),
             struct.pack("<Q", model.rng_seed & 0xFFFFFFFFFFFFFFFF)]
    arrays = [np.asarray(model.topology.dropout_rates, float), model.input_shift0, model.input_shift1]
    for w, b in zip(model.weights, model.biases):
        arrays += [w, b]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:5] != CKPT_MAGIC:
        raise ParseError(f"{path}: not a VNET1 checkpoint")
    try:
        (n,) = struct.unpack_from("<I", data, 5)
        sizes = list(struct.unpack_from(f"<{n}I", data, 9))
        off = 9 + 4 * n
        (seed,) = struct.unpack_from("<Q", data, off)
        off += 8

        def take(count, shape=None):
            nonlocal off
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
            off += 8 * count
            return arr.reshape(shape) if shape else arr

        dropout = take(n - 2).tolist()
        s0 = take(sizes[0])
        s1 = take(sizes[0])
        weights, biases = [], []
        for l in range(n - 1):
            weights.append(take(sizes[l] * sizes[l + 1], (sizes[l], sizes[l + 1])))
            biases.append(take(sizes[l + 1]))
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated checkpoint ({exc})") from None
    if off != len(data):
        raise ParseError(f"{path}: {len(data) - off} trailing bytes")
    return NetworkModel(Topology(sizes, dropout), weights, biases, seed, s0, s1)
