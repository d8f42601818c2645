"""Multi-run experiment protocol: configuration, per-run pipeline, aggregation
and report files.

One experiment simulates (or loads) the data once, then performs
``runs`` independent training runs that differ in their train/validation
split and network initialization. Every seed derives from one master seed.
"""
import configparser
import csv
import dataclasses
import io
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import baseline, koopman, network, simulate, vampscore
from .dataset import lagged_pairs, read_trajectory, split
from .errors import ConfigError, VampnetError

log = logging.getLogger(__name__)

SYSTEMS = ("doublewell", "folding5d", "trajectory")

# Settings per toy system. Dropout is off: on these tiny lobes it lowers the
# validation score, which is the selection criterion for hyper-parameters.
PRESETS = {
    "doublewell": {
        "system": {"n_steps": "50000"},
        "network": {"layers": "1,5,10,5", "dropout": "0,0"},
        "train": {"lag": "1", "k": "4"},
        "experiment": {"success_reference_tolerance": "0.2"},
        "analysis": {"its_lags": "1,2,3,4,5,6,7,8,9,10", "its_k": "1", "ck_tau": "1",
                     "ck_n": "1,2,3,4,5", "reference": "x", "reference_bins": "200",
                     "two_state_threshold": "0.0"},
    },
    "folding5d": {
        "system": {"n_steps": "100000"},
        "network": {"layers": "5,32,16,8,2", "dropout": "0,0,0"},
        "train": {"lag": "1", "k": "1"},
        "analysis": {"its_lags": "1,2,3,4,5,6,7,8,9,10", "its_k": "1", "ck_tau": "1",
                     "ck_n": "1,2,3,4,5", "reference": "r", "reference_bins": "100",
                     "two_state_threshold": "3.0"},
    },
    "trajectory": {},
}

SCHEMA = {
    "system": {"name": str, "path": str, "format": str, "n_steps": int, "dt": float,
               "diffusion": float, "kT": float, "seed": int, "burn_in": int,
               "time_unit": str, "frame_time": float},
    "network": {"layers": "ints", "n_out": int, "depth": int, "dropout": "floats"},
    "train": {"lag": int, "batch_size": int, "epochs": int, "lr0": float, "lr_patience": int,
              "lr_decay": float, "l2_hidden": float, "l2_output": float,
              "pretrain_fraction": float, "k": int, "schedule_unit": str,
              "center_inputs": bool, "validation_fraction": float},
    "analysis": {"its_lags": "ints", "its_k": int, "ck_tau": int, "ck_n": "ints",
                 "reference": str, "reference_bins": int, "two_state_threshold": float,
                 "align_frames": int},
    "experiment": {"runs": int, "workers": int, "master_seed": int, "trim": float,
                   "ci": float, "success_min_timescales": "floats",
                   "success_reference_tolerance": float},
    "output": {"dir": str},
}


@dataclass
class ExperimentConfig:
    system: str = "doublewell"
    path: str = None
    format: str = "binary"
    n_steps: int = 50000
    dt: float = 0.05
    diffusion: float = 1.0
    kT: float = 1.0
    sim_seed: int = None
    burn_in: int = 0
    time_unit: str = "dimensionless"
    layers: list = None
    n_out: int = None
    depth: int = None
    dropout: list = None
    train: network.TrainConfig = field(default_factory=network.TrainConfig)
    validation_fraction: float = 0.1
    its_lags: list = field(default_factory=lambda: [1, 2, 5, 10])
    its_k: int = 1
    ck_tau: int = 1
    ck_n: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    reference: str = "none"
    reference_bins: int = 200
    two_state_threshold: float = None
    align_frames: int = 2000
    runs: int = 100
    workers: int = 1
    master_seed: int = 0
    trim: float = 0.05
    ci: float = 0.95
    success_min_timescales: list = None
    success_reference_tolerance: float = None
    out_dir: str = "vampnet-out"
    frame_time: float = None  # physical time per frame; taken from the data when unset

    def echo(self):
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d, default=str))


def _convert(kind, raw, where):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "ints":
            return [int(v) for v in raw.replace(" ", "").split(",") if v]
        if kind == "floats":
            return [float(v) for v in raw.replace(" ", "").split(",") if v]
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def parse_config(text=None, path=None, overrides=None):
    """Parse an INI-style experiment config; unknown sections/keys are errors.

    ``overrides`` is a ``{section: {key: value}}`` dict applied last
    (used by the CLI flags).
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh, source=str(path))
        elif text is not None:
            cp.read_string(text)
    except (configparser.Error, OSError) as exc:
        raise ConfigError(str(exc)) from None
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
    name = cp.get("system", "name", fallback="doublewell").strip()
    if name not in SYSTEMS:
        raise ConfigError(f"[system] name must be one of {SYSTEMS}, got {name!r}")
    merged = {sec: dict(vals) for sec, vals in PRESETS[name].items()}
    for sec in cp.sections():
        merged.setdefault(sec, {}).update(cp[sec])
    for sec, vals in (overrides or {}).items():
        merged.setdefault(sec, {}).update({k: str(v) for k, v in vals.items() if v is not None})
    vals = {}
    for sec, items in merged.items():
        for key, raw in items.items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            vals[(sec, key)] = _convert(SCHEMA[sec][key], raw, f"[{sec}] {key}")

    def get(sec, key, default=None):
        return vals.get((sec, key), default)

    train_kw = {k: get("train", k) for k in SCHEMA["train"]
                if k != "validation_fraction" and get("train", k) is not None}
    try:
        train_cfg = network.TrainConfig(**train_kw)
        cfg = ExperimentConfig(
            system=name,
            path=get("system", "path"),
            format=get("system", "format", "binary"),
            n_steps=get("system", "n_steps", 50000),
            dt=get("system", "dt", 0.05),
            diffusion=get("system", "diffusion", 1.0),
            kT=get("system", "kT", 1.0),
            sim_seed=get("system", "seed"),
            burn_in=get("system", "burn_in", 0),
            time_unit=get("system", "time_unit", "dimensionless"),
            layers=get("network", "layers"),
            n_out=get("network", "n_out"),
            depth=get("network", "depth"),
            dropout=get("network", "dropout"),
            train=train_cfg,
            validation_fraction=get("train", "validation_fraction", 0.1),
            its_lags=get("analysis", "its_lags", [1, 2, 5, 10]),
            its_k=get("analysis", "its_k", 1),
            ck_tau=get("analysis", "ck_tau", 1),
            ck_n=get("analysis", "ck_n", [1, 2, 3, 4, 5]),
            reference=get("analysis", "reference", "none"),
            reference_bins=get("analysis", "reference_bins", 200),
            two_state_threshold=get("analysis", "two_state_threshold"),
            align_frames=get("analysis", "align_frames", 2000),
            runs=get("experiment", "runs", 100),
            workers=get("experiment", "workers", 1),
            master_seed=get("experiment", "master_seed", 0),
            trim=get("experiment", "trim", 0.05),
            ci=get("experiment", "ci", 0.95),
            success_min_timescales=get("experiment", "success_min_timescales"),
            success_reference_tolerance=get("experiment", "success_reference_tolerance"),
            out_dir=get("output", "dir", "vampnet-out"),
            frame_time=get("system", "frame_time"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.system == "trajectory" and not cfg.path:
        raise ConfigError("[system] path is required for name = trajectory")
    if cfg.layers is None and (cfg.n_out is None or cfg.depth is None):
        raise ConfigError("[network] needs either layers or both n_out and depth")
    if cfg.reference not in ("none", "x", "r"):
        raise ConfigError("[analysis] reference must be none, x or r")
    if cfg.runs < 1 or cfg.workers < 1:
        raise ConfigError("runs and workers must be >= 1")
    if not 0.0 <= cfg.trim < 0.5:
        raise ConfigError("trim must lie in [0, 0.5)")
    if not 0.0 < cfg.ci < 1.0:
        raise ConfigError("ci must lie in (0, 1)")
    if not 0.0 < cfg.validation_fraction < 1.0:
        raise ConfigError("validation_fraction must lie in (0, 1)")
    if min(cfg.ck_n) < 1 or min(cfg.its_lags) < 1:
        raise ConfigError("lags and CK multiples must be >= 1")


def topology_for(cfg, n_in):
    if cfg.layers is not None:
        topo = network.build_topology(n_in, cfg.layers[-1], explicit=cfg.layers)
    else:
        topo = network.build_topology(n_in, cfg.n_out, cfg.depth)
    if cfg.dropout is not None:
        rates = list(cfg.dropout)
        n_hidden = len(topo.layer_sizes) - 2
        if len(rates) == 1:
            rates = network.default_dropout(n_hidden, rates[0])
        topo = network.Topology(topo.layer_sizes, rates)
    if topo.n_in != n_in:
        raise ConfigError(f"network input width {topo.n_in} does not match data dimension {n_in}")
    return topo


def _seed_of(ss):
    return int(ss.generate_state(1, np.uint64)[0])


def experiment_seeds(master_seed, runs):
    """``(simulation_seed, [(split_seed, train_seed), ...])`` from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(1 + runs)
    sim = _seed_of(children[0])
    per_run = []
    for child in children[1:]:
        a, b = child.spawn(2)
        per_run.append((_seed_of(a), _seed_of(b)))
    return sim, per_run


def load_data(cfg, sim_seed):
    if cfg.system == "trajectory":
        return [read_trajectory(cfg.path, cfg.format)]
    spec = simulate.Potential(cfg.system)
    bd = simulate.BDConfig(n_steps=cfg.n_steps, dt=cfg.dt, diffusion=cfg.diffusion, kT=cfg.kT,
                           seed=sim_seed if cfg.sim_seed is None else cfg.sim_seed,
                           burn_in=cfg.burn_in)
    return [simulate.bd_trajectory(spec, bd)]


def reaction_coordinate(cfg, frames):
    if cfg.reference == "x":
        return frames[:, 0]
    if cfg.reference == "r":
        return np.linalg.norm(frames, axis=1)
    return None


@dataclass
class Reference:
    """Fine-grid MSM on a 1D coordinate, for comparison with the network."""
    eigenfunction: np.ndarray  # per frame of the (single) trajectory
    timescales: dict  # lag -> slowest implied timescale
    edges: tuple  # (lo, hi) of the uniform grid


def build_reference(cfg, trajs):
    if cfg.reference == "none" or len(trajs) != 1:
        return None
    coord = reaction_coordinate(cfg, trajs[0].frames)
    ef, _ = baseline.reference_eigenfunction(coord, cfg.reference_bins, cfg.train.lag)
    ts = {lag: baseline.reference_eigenfunction(coord, cfg.reference_bins, lag)[1]
          for lag in sorted(set(cfg.its_lags) | {cfg.train.lag})}
    return Reference(ef, ts, (float(coord.min()), float(coord.max())))


@dataclass
class RunResult:
    run: int
    split_seed: int
    train_seed: int
    ok: bool = False
    error: str = None
    val_score: float = float("nan")
    cv_score: float = float("nan")
    train_score_first: float = float("nan")
    train_score_last: float = float("nan")
    best_epoch: int = -1
    timescales: np.ndarray = None  # (n_lags, its_k)
    ck_predicted: np.ndarray = None  # (n_values, m, m)
    ck_estimated: np.ndarray = None
    eigen_corr: float = float("nan")
    msm_two_state: float = float("nan")
    msm_reference: float = float("nan")
    success: bool = False
    align_features: np.ndarray = None
    wall_time: float = 0.0
    lr_events: list = None


def _msm_scores(cfg, coord, ds, sp):
    """Cross-validated VAMP-2 of crisp 2-bin and fine-bin discretizations."""
    lo, hi = float(coord.min()), float(coord.max())
    d_fine = baseline.uniform_bins(coord, cfg.reference_bins, lo, hi)
    d_two = (coord >= cfg.two_state_threshold).astype(np.int64)
    score_cfg = cfg.train.score_config
    out = []
    for d, n in ((d_two, 2), (d_fine, cfg.reference_bins)):
        covs = []
        for idx in (sp.train, sp.validation):
            t0 = ds.time_index[idx]
            covs.append(baseline.pair_indicator_covariances(d[t0], d[t0 + ds.lag], n))
        out.append(vampscore.cross_validated_score(covs[0], covs[1], score_cfg))
    return out


def _network_cv_score(cfg, model, ds, sp):
    covs = []
    for idx in (sp.train, sp.validation):
        covs.append(vampscore.covariances(model(ds.frames0(idx)).T, model(ds.frames1(idx)).T))
    return vampscore.cross_validated_score(covs[0], covs[1], cfg.train.score_config)


def run_single(cfg, trajs, reference, run, split_seed, train_seed, out_dir=None):
    """One training run plus its kinetic analysis; failures are captured."""
    t0 = time.perf_counter()
    res = RunResult(run, split_seed, train_seed)
    try:
        tcfg = dataclasses.replace(cfg.train, seed=train_seed)
        ds = lagged_pairs(trajs, tcfg.lag)
        sp = split(ds, cfg.validation_fraction, split_seed)
        topo = topology_for(cfg, trajs[0].dim)
        model, report = network.train(ds, sp, topo, tcfg)
        res.lr_events = report.events
        if report.diverged and report.best_epoch < 0:
            raise VampnetError(f"training diverged: {report.events[-1].get('reason')}")
        res.val_score = report.final_val_score
        res.best_epoch = report.best_epoch
        res.cv_score = _network_cv_score(cfg, model, ds, sp)
        res.train_score_first = report.train_scores[0]
        res.train_score_last = report.train_scores[-1]
        its = koopman.implied_timescales(model, trajs, cfg.its_lags, cfg.its_k, tcfg.eps_rel)
        res.timescales = its.timescales
        ck = koopman.ck_test(model, trajs, cfg.ck_tau, cfg.ck_n, tcfg.eps_rel)
        res.ck_predicted = np.array(ck.predicted)
        res.ck_estimated = np.array(ck.estimated)
        frames = trajs[0].frames
        step = max(1, len(frames) // cfg.align_frames)
        res.align_features = model(frames[::step])
        if reference is not None:
            km = koopman.koopman_at_lag(koopman.transformed(model, trajs), tcfg.lag, tcfg.eps_rel)
            psi = koopman.eigenfunction_values(km, model, frames, [1])[:, 0]
            res.eigen_corr = float(abs(np.corrcoef(np.real(psi), reference.eigenfunction)[0, 1]))
            if cfg.two_state_threshold is not None:
                coord = reaction_coordinate(cfg, frames)
                res.msm_two_state, res.msm_reference = _msm_scores(cfg, coord, ds, sp)
        res.success = _is_success(cfg, res, reference)
        res.ok = True
        if out_dir is not None:
            run_dir = Path(out_dir) / f"run_{run:03d}"
            run_dir.mkdir(parents=True, exist_ok=True)
            network.save_checkpoint(model, run_dir / "checkpoint.vnet")
            _write_run_files(cfg, res, run_dir)
    except (VampnetError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("run %d failed: %s", run, exc)
        res.ok = False
        res.error = f"{type(exc).__name__}: {exc}"
    res.wall_time = time.perf_counter() - t0
    return res


def _is_success(cfg, res, reference):
    at_lag = cfg.its_lags.index(cfg.train.lag) if cfg.train.lag in cfg.its_lags else None
    ok = True
    if cfg.success_min_timescales:
        if at_lag is None:
            return False
        ts = res.timescales[at_lag]
        for i, minimum in enumerate(cfg.success_min_timescales):
            # thresholds are in physical time units
            if i >= ts.size or not ts[i] * _dt_frame(cfg) >= minimum:
                ok = False
    if cfg.success_reference_tolerance is not None and reference is not None and at_lag is not None:
        ref = reference.timescales[cfg.train.lag]
        if not abs(res.timescales[at_lag, 0] - ref) <= cfg.success_reference_tolerance * ref:
            ok = False
    return ok


def _dt_frame(cfg):
    if cfg.frame_time is not None:
        return cfg.frame_time
    return cfg.dt if cfg.system != "trajectory" else 1.0


def _fmt(v):
    return repr(float(v))


def _write_run_files(cfg, res, run_dir):
    with open(run_dir / "its.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "lag", "index", "value"])
        for li, lag in enumerate(cfg.its_lags):
            for k in range(res.timescales.shape[1]):
                w.writerow([res.run, lag, k, _fmt(res.timescales[li, k])])
    with open(run_dir / "ck.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "n", "i", "j", "predicted", "estimated"])
        m = res.ck_predicted.shape[1]
        for ni, n in enumerate(cfg.ck_n):
            for i in range(m):
                for j in range(m):
                    w.writerow([res.run, n, i, j, _fmt(res.ck_predicted[ni, i, j]),
                                _fmt(res.ck_estimated[ni, i, j])])
    with open(run_dir / "run.json", "w") as fh:
        json.dump(_run_record(res), fh, indent=2, sort_keys=True)


def _run_record(res):
    return {
        "run": res.run,
        "split_seed": res.split_seed,
        "train_seed": res.train_seed,
        "ok": res.ok,
        "error": res.error,
        "val_score": res.val_score,
        "cv_score": res.cv_score,
        "best_epoch": res.best_epoch,
        "eigen_corr": res.eigen_corr,
        "msm_two_state": res.msm_two_state,
        "msm_reference": res.msm_reference,
        "success": res.success,
        "lr_events": res.lr_events,
    }


def _exact_percentile(sorted_vals, q):
    """Linear-interpolation percentile at fraction ``q`` (a Fraction),
    evaluated exactly and rounded once."""
    h = (len(sorted_vals) - 1) * q
    i = math.floor(h)
    a = Fraction(sorted_vals[i])
    if i + 1 >= len(sorted_vals):
        return float(a)
    b = Fraction(sorted_vals[i + 1])
    return float(a + (h - i) * (b - a))


def aggregate_runs(values, trim_fraction=0.05, ci_level=0.95):
    """Trimmed mean and percentile interval over runs.

    Drops ``ceil(trim_fraction * N)`` values from each end of the sorted
    sample, then reports the mean and the ``(1-ci)/2`` and ``(1+ci)/2``
    percentiles (linear interpolation) of what is left. Both are computed
    in exact rational arithmetic and rounded once, so any exact
    recomputation reproduces them bit for bit.
    """
    v = sorted(float(x) for x in values)
    if any(math.isnan(x) for x in v):
        raise ValueError("NaN among the values")
    trim = Fraction(trim_fraction).limit_denominator(10 ** 6)
    n_cut = math.ceil(trim * len(v))
    kept = v[n_cut:len(v) - n_cut]
    if len(kept) < 3:
        raise ValueError(f"need at least 3 values after trimming, have {len(kept)}")
    mean = float(sum(map(Fraction, kept)) / len(kept))
    tail = (1 - Fraction(ci_level).limit_denominator(10 ** 6)) / 2
    return mean, (_exact_percentile(kept, tail), _exact_percentile(kept, 1 - tail))


def _agg(values, cfg):
    vals = [v for v in values if not np.isnan(v)]
    try:
        mean, (lo, hi) = aggregate_runs(vals, cfg.trim, cfg.ci)
    except ValueError:
        return None
    return {"mean": mean, "lower": lo, "upper": hi, "n": len(vals)}


@dataclass
class RunSummary:
    config: dict
    runs: list
    aggregate: dict
    units: dict


def summarize(cfg, results, reference):
    ok = [r for r in results if r.ok]
    if not ok:
        raise VampnetError("all runs failed")
    groups = {"all": ok, "successful": [r for r in ok if r.success]}
    aggregate = {"n_runs": len(results), "n_ok": len(ok),
                 "success_rate": sum(r.success for r in ok) / len(results)}
    for name, rs in groups.items():
        block = {}
        for metric in ("val_score", "cv_score", "eigen_corr", "msm_two_state", "msm_reference"):
            block[metric] = _agg([getattr(r, metric) for r in rs], cfg)
        its = []
        for li, lag in enumerate(cfg.its_lags):
            for k in range(cfg.its_k):
                entry = _agg([r.timescales[li, k] for r in rs], cfg)
                its.append({"lag": lag, "index": k, "stats": entry})
        block["its"] = its
        aggregate[name] = block
    aggregate["its_flat"] = _its_flat_flags(cfg, aggregate["all"]["its"])
    aggregate["ck"] = _ck_summary(cfg, ok)
    if reference is not None:
        aggregate["reference_timescales"] = {str(k): v for k, v in reference.timescales.items()}
    units = {"timescales": f"frames (x {_dt_frame(cfg)} {cfg.time_unit} per frame)",
             "lag": "frames", "scores": "VAMP-2 (sum of squared singular values + 1)"}
    runs = [_run_record(r) for r in results]
    return RunSummary(cfg.echo(), runs, aggregate, units)


def _its_flat_flags(cfg, its_entries):
    flags = []
    for k in range(cfg.its_k):
        rows = [e["stats"] for e in its_entries if e["index"] == k]
        if any(r is None for r in rows):
            flags.append(None)
            continue
        lo = np.array([[r["lower"]] for r in rows])
        hi = np.array([[r["upper"]] for r in rows])
        flags.append(bool(koopman.its_flat(lo, hi)[0]))
    return flags


def _ck_summary(cfg, ok):
    if len(ok) < 3:
        return None
    ref = ok[0].align_features
    pred, est = [], []
    for r in ok:
        perm = koopman.align_states(ref, r.align_features)
        pred.append([koopman.permute_matrix(k, perm) for k in r.ck_predicted])
        est.append([koopman.permute_matrix(k, perm) for k in r.ck_estimated])
    agree, bands = koopman.ck_agreement(np.array(pred), np.array(est), cfg.ci)
    return {
        "n_values": list(cfg.ck_n),
        "agree": agree.tolist(),
        "all_agree": bool(agree.all()),
        "pred_mean": np.mean(pred, axis=0).tolist(),
        "est_mean": np.mean(est, axis=0).tolist(),
        **{k: v.tolist() for k, v in bands.items()},
    }


def _pool_run(args):
    return run_single(*args)


def run_experiment(cfg, out_dir=None):
    """Run the full protocol and write all artifacts under ``out_dir``.

    Returns the :class:`RunSummary`. Raises :class:`VampnetError` only if
    every run failed.
    """
    out_dir = Path(out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sim_seed, seeds = experiment_seeds(cfg.master_seed, cfg.runs)
    trajs = load_data(cfg, sim_seed)
    if cfg.frame_time is None:
        cfg = dataclasses.replace(cfg, frame_time=trajs[0].dt_per_frame)
    reference = build_reference(cfg, trajs)
    jobs = [(cfg, trajs, reference, i, s, t, out_dir) for i, (s, t) in enumerate(seeds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_pool_run, jobs))
    else:
        results = [_pool_run(j) for j in jobs]
    with open(out_dir / "timing.json", "w") as fh:
        json.dump({f"run_{r.run:03d}": r.wall_time for r in results}, fh, indent=2)
    summary = summarize(cfg, results, reference)
    emit_report(summary, out_dir, "json")
    emit_report(summary, out_dir, "csv")
    return summary


def _long_rows(summary):
    rows = []
    for rec in summary.runs:
        if not rec["ok"]:
            continue
        for metric in ("val_score", "cv_score", "eigen_corr", "msm_two_state", "msm_reference"):
            rows.append((metric, rec["run"], "", "", rec[metric]))
        rows.append(("success", rec["run"], "", "", float(rec["success"])))
    return rows


def emit_report(summary, out_dir, format="json"):
    """Write ``summary.json`` or ``runs.csv`` (long format) atomically."""
    if summary is None or not summary.runs:
        raise VampnetError("empty summary; nothing written")
    out_dir = Path(out_dir)
    if format == "json":
        text = json.dumps({"config": summary.config, "units": summary.units,
                           "aggregate": summary.aggregate, "runs": summary.runs},
                          indent=2, sort_keys=True, allow_nan=True)
        target = out_dir / "summary.json"
    elif format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "run", "lag", "index", "value"])
        for metric, run, lag, index, value in _long_rows(summary):
            w.writerow([metric, run, lag, index, _fmt(value)])
        for rec in summary.runs:
            if rec["ok"]:
                its_file = out_dir / f"run_{rec['run']:03d}" / "its.csv"
                if its_file.exists():
                    with open(its_file, newline="") as fh:
                        for row in csv.DictReader(fh):
                            w.writerow(["timescale", row["run"], row["lag"], row["index"], row["value"]])
        text = buf.getvalue()
        target = out_dir / "runs.csv"
    else:
        raise ValueError(f"unknown report format {format!r}")
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, target)
    return target


def aggregate_from_csv(path, trim_fraction=0.05, ci_level=0.95):
    """Re-derive aggregate statistics from a ``runs.csv`` file."""
    groups = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["metric"], row["lag"], row["index"])
            groups.setdefault(key, []).append(float(row["value"]))
    out = {}
    for key, vals in groups.items():
        vals = [v for v in vals if not np.isnan(v)]
        try:
            out[key] = aggregate_runs(vals, trim_fraction, ci_level)
        except ValueError:
            out[key] = None
    return out
