"""Command line entry point.

Exit codes: 0 success, 1 experiment/run failure, 2 configuration error.
"""
import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baseline, experiment, koopman, network
from .dataset import lagged_pairs, read_trajectory, split, write_trajectory
from .errors import ConfigError, VampnetError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _load_cfg(args):
    overrides = {"experiment": {}, "output": {}}
    if getattr(args, "seed", None) is not None:
        overrides["experiment"]["master_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        overrides["experiment"]["runs"] = args.runs
    if getattr(args, "workers", None) is not None:
        overrides["experiment"]["workers"] = args.workers
    if getattr(args, "out", None) is not None:
        overrides["output"]["dir"] = args.out
    if args.config is not None and not Path(args.config).is_file():
        raise ConfigError(f"config file not found: {args.config}")
    return experiment.parse_config(path=args.config, overrides=overrides)


def _trajectories(cfg, args):
    if getattr(args, "trajectory", None):
        fmt = "csv" if args.trajectory.endswith(".csv") else "binary"
        return [read_trajectory(args.trajectory, fmt)]
    sim_seed, _ = experiment.experiment_seeds(cfg.master_seed, 1)
    return experiment.load_data(cfg, sim_seed)


def _model(cfg, args, trajs):
    if getattr(args, "checkpoint", None):
        return network.load_checkpoint(args.checkpoint), None
    _, seeds = experiment.experiment_seeds(cfg.master_seed, 1)
    split_seed, train_seed = seeds[0]
    ds = lagged_pairs(trajs, cfg.train.lag)
    sp = split(ds, cfg.validation_fraction, split_seed)
    topo = experiment.topology_for(cfg, trajs[0].dim)
    return network.train(ds, sp, topo, dataclasses.replace(cfg.train, seed=train_seed))


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def cmd_simulate(cfg, args, out):
    trajs = _trajectories(cfg, args)
    path = out / "trajectory.vtrj"
    write_trajectory(trajs[0], path, "binary")
    print(f"wrote {len(trajs[0])} frames to {path}")
    return EXIT_OK


def cmd_train(cfg, args, out):
    trajs = _trajectories(cfg, args)
    model, report = _model(cfg, args, trajs)
    network.save_checkpoint(model, out / "checkpoint.vnet")
    _write_json(out / "train_report.json", {
        "train_scores": report.train_scores, "val_scores": report.val_scores,
        "learning_rates": report.learning_rates, "events": report.events,
        "best_epoch": report.best_epoch, "final_val_score": report.final_val_score,
        "diverged": report.diverged, "completed": report.completed})
    print(f"best validation VAMP-2 {report.final_val_score:.6f} at epoch {report.best_epoch}")
    return EXIT_FAIL if report.best_epoch < 0 else EXIT_OK


def cmd_its(cfg, args, out):
    trajs = _trajectories(cfg, args)
    model, _ = _model(cfg, args, trajs)
    its = koopman.implied_timescales(model, trajs, cfg.its_lags, cfg.its_k, cfg.train.eps_rel)
    with open(out / "its.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "lag", "index", "value"])
        for li, lag in enumerate(cfg.its_lags):
            for k in range(its.timescales.shape[1]):
                w.writerow([0, lag, k, repr(float(its.timescales[li, k]))])
                print(f"lag {lag:4d}  t{k + 2} = {its.timescales[li, k]:.4g}")
    return EXIT_OK


def cmd_cktest(cfg, args, out):
    trajs = _trajectories(cfg, args)
    model, _ = _model(cfg, args, trajs)
    ck = koopman.ck_test(model, trajs, cfg.ck_tau, cfg.ck_n, cfg.train.eps_rel)
    m = ck.predicted[0].shape[0]
    with open(out / "ck.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "n", "i", "j", "predicted", "estimated"])
        for ni, n in enumerate(cfg.ck_n):
            for i in range(m):
                for j in range(m):
                    w.writerow([0, n, i, j, repr(float(ck.predicted[ni][i, j])),
                                repr(float(ck.estimated[ni][i, j]))])
    err = max(float(np.max(np.abs(p - e))) for p, e in zip(ck.predicted, ck.estimated))
    print(f"max |K(tau)^n - K(n tau)| = {err:.4g}")
    return EXIT_OK


def cmd_baseline(cfg, args, out):
    trajs = _trajectories(cfg, args)
    tica = baseline.tica_fit(trajs, cfg.train.lag)
    proj = [tica.transform(t.frames) for t in trajs]
    centers, _ = baseline.kmeans(np.concatenate(proj), args.clusters, seed=cfg.master_seed)
    dtrajs = [np.argmin(((p[:, None, :] - centers[None]) ** 2).sum(-1), axis=1) for p in proj]
    rows = []
    for lag in cfg.its_lags:
        msm = baseline.msm_estimate(dtrajs, lag)
        lam, _ = koopman.eig_sorted(msm.transition_matrix)
        ts = koopman.timescales_from_eigenvalues(lam[1:1 + cfg.its_k], lag)
        score = baseline.msm_vamp2(dtrajs, lag, cfg.train.score_config)
        rows.append((lag, ts, score))
        print(f"lag {lag:4d}  VAMP-2 {score:.4f}  t2 = {ts[0]:.4g}")
    with open(out / "baseline.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "run", "lag", "index", "value"])
        for lag, ts, score in rows:
            w.writerow(["vamp2", 0, lag, "", repr(float(score))])
            for k, t in enumerate(ts):
                w.writerow(["timescale", 0, lag, k, repr(float(t))])
    return EXIT_OK


def cmd_experiment(cfg, args, out):
    summary = experiment.run_experiment(cfg, out)
    agg = summary.aggregate
    print(f"runs ok {agg['n_ok']}/{agg['n_runs']}, success rate {agg['success_rate']:.3f}")
    print(f"wrote {out / 'summary.json'} and {out / 'runs.csv'}")
    return EXIT_OK


def cmd_report(cfg, args, out):
    src = Path(args.experiment_dir or out)
    runs_csv = src / "runs.csv"
    if not runs_csv.is_file():
        raise ConfigError(f"no runs.csv in {src}")
    stats = experiment.aggregate_from_csv(runs_csv, cfg.trim, cfg.ci)
    for (metric, lag, index), val in sorted(stats.items()):
        where = f" lag={lag} index={index}" if lag else ""
        if val is None:
            print(f"{metric}{where}: too few runs")
        else:
            mean, (lo, hi) = val
            print(f"{metric}{where}: {mean:.6g} [{lo:.6g}, {hi:.6g}]")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "simulate the configured system and write a VTRJ1 trajectory"),
    "train": (cmd_train, "train one network and write its checkpoint"),
    "its": (cmd_its, "implied timescales of a trained network"),
    "cktest": (cmd_cktest, "Chapman-Kolmogorov test of a trained network"),
    "baseline": (cmd_baseline, "TICA + k-means + MSM reference pipeline"),
    "experiment": (cmd_experiment, "full multi-run protocol with aggregate report"),
    "report": (cmd_report, "recompute aggregate statistics from an experiment's runs.csv"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="vampnet", description="VAMPnets from scratch on numpy.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="INI experiment configuration")
        p.add_argument("--seed", type=int, metavar="N", help="master seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--runs", type=int, metavar="N", help="number of training runs")
        p.add_argument("--workers", type=int, metavar="N", help="parallel worker processes")
        if name in ("train", "its", "cktest", "baseline", "simulate"):
            p.add_argument("--trajectory", metavar="PATH", help="use this trajectory instead of simulating")
        if name in ("its", "cktest"):
            p.add_argument("--checkpoint", metavar="PATH", help="trained network (otherwise train one)")
        if name == "baseline":
            p.add_argument("--clusters", type=int, default=100, metavar="N")
        if name == "report":
            p.add_argument("--experiment-dir", metavar="DIR", help="defaults to --out")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = _load_cfg(args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return func(cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (VampnetError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
