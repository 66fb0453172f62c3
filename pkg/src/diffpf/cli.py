"""Command-line entry point: gen-data, train, eval, benchmark."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from diffpf import evaluate as E
from diffpf.tasks import TASK_CLASSES, TASK_NAMES, make_task
from diffpf.tasks.dataset import gen_dataset, load_dataset, save_dataset
from diffpf.train import TrainConfig, TrainingDiverged, load_checkpoint, save_checkpoint, train_loop

METRICS = ("mse", "rmse", "final-rmse")
METHODS = ("diffpf", "bpf", "kf")
CHECKPOINT_NAME = "model.ckpt"
LOSS_NAME = "loss.csv"


class CLIError(Exception):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(f"usage: {message}", code=2)


def _workers():
    try:
        return max(1, int(os.environ.get("DIFFPF_THREADS", "1")))
    except ValueError:
        raise CLIError("DIFFPF_THREADS must be an integer") from None


def _seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise CLIError(f"--seeds must be comma-separated integers, got {text!r}", code=2) from None
    if not seeds:
        raise CLIError("--seeds is empty", code=2)
    return seeds


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _summary(values):
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std()), "per_seed": [float(x) for x in v]}


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args):
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CLIError(f"output directory {out} is not empty (use --force to overwrite)")
    if args.image_size is not None and args.task != "disk":
        raise CLIError("--image-size only applies to the disk task", code=2)
    length = args.length or TASK_CLASSES[args.task].default_length
    if args.task == "disk" and args.image_size is not None:
        task = make_task("disk", image_size=args.image_size)
    else:
        task = args.task
    ds = gen_dataset(task, args.sequences, length, args.seed, num_test=args.test_sequences)
    save_dataset(ds, out)
    print(f"wrote {ds.num_train}+{ds.num_sequences - ds.num_train} {ds.task.name} sequences of length {length} to {out}")


# ---------------------------------------------------------------- train


def cmd_train(args):
    if args.phase == 2 and not args.from_ckpt:
        raise CLIError("usage: --phase 2 requires --from CHECKPOINT", code=2)
    ds = load_dataset(args.data)
    if args.task and args.task != ds.task.name:
        raise CLIError(f"task mismatch: --task {args.task} but dataset {args.data} holds {ds.task.name}")
    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
    cfg["task"] = ds.task.name
    cfg["phase"] = args.phase
    for key in ("seed", "iterations", "model"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    init = None
    if args.from_ckpt:
        init = load_checkpoint(args.from_ckpt)
        if init.model.task.name != ds.task.name:
            raise CLIError(f"task mismatch: checkpoint {args.from_ckpt} holds {init.model.task.name}, "
                           f"dataset holds {ds.task.name}")
        for key in ("K", "N", "model"):
            cfg.setdefault(key, getattr(init.config, key))
    cfg.setdefault("N", ds.task.default_particles)
    try:
        config = TrainConfig.from_dict(cfg)
        ckpt = train_loop(config, ds, init=init)
    except TrainingDiverged as exc:
        raise CLIError(str(exc)) from None
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out / CHECKPOINT_NAME)
    with open(out / LOSS_NAME, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(ckpt.trace):
            w.writerow([i, repr(float(v))])
    print(f"trained {config.model} phase {config.phase} for {config.iterations} iterations; "
          f"final loss {ckpt.trace[-1]:.6g}; wrote {out / CHECKPOINT_NAME}")


# ---------------------------------------------------------------- eval


def _check_model(ckpt, ds, path):
    if ckpt.model.task.name != ds.task.name:
        raise CLIError(f"task mismatch: checkpoint {path} holds {ckpt.model.task.name}, dataset holds {ds.task.name}")
    if ds.task.name == "maze" and ckpt.model.task.params["grid"] != ds.task.params["grid"]:
        raise CLIError(f"maze layout of checkpoint {path} differs from the dataset's")


def _run_method(method, ckpt, ds, seed, N, keep_particles=False):
    states, actions, obs = ds.split("test")
    if method == "diffpf":
        return E.run_diffpf(ckpt.model, states, actions, obs, seed, N=N, keep_particles=keep_particles)
    if method == "bpf":
        return E.run_bpf(ckpt.model, states, actions, obs, seed, N)
    return E.run_kalman(ds.task, states, actions, obs)


def _hz(method, ckpt, ds, seed, N):
    states, actions, obs = ds.split("test")
    if method == "diffpf":
        return E.measure_hz(ckpt.model, states, actions, obs, seed=seed)
    if method == "bpf":
        return E.measure_hz_bpf(ckpt.model, states, actions, obs, N, seed=seed)
    return E.measure_hz_kf(ds.task, states, actions, obs)


def evaluate_cell(method, ckpt, ds, seeds, N, metric, timing=True):
    """Score one (task, method) pair over seeds; returns the RunReport dict."""
    states = ds.split("test")[0]

    def one(seed):
        res = _run_method(method, ckpt, ds, seed, N)
        sc = E.score(ds.task, res["estimates"], states)
        return {"seed": seed, "mse": sc["mse"], "rmse": sc["rmse"], "final_rmse": sc["final_rmse"],
                "value": sc[metric.replace("-", "_")]}

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        per_seed = list(pool.map(one, seeds))
    report = {
        "task": ds.task.name,
        "method": method,
        "metric": metric,
        "per_seed": per_seed,
        "value": _summary([r["value"] for r in per_seed]),
    }
    if ds.task.name == "maze":
        report["uniform_baseline_final_rmse"] = E.uniform_baseline(ds.task, states)
    if timing:
        report["timing"] = {"hz": _summary([_hz(method, ckpt, ds, s, N) for s in seeds])}
    return report


def cmd_eval(args):
    ds = load_dataset(args.data)
    ckpt = load_checkpoint(args.model)
    _check_model(ckpt, ds, args.model)
    method = "diffpf" if ckpt.kind == "diffpf" else "bpf"
    N = args.particles or (ckpt.model.N if method == "diffpf" else ds.task.default_particles)
    if method == "diffpf":
        K = ckpt.model.schedule.K
        if args.diffusion_steps is not None and args.diffusion_steps != K:
            raise CLIError(f"diffusion steps mismatch: checkpoint was trained with K={K}, "
                           f"--diffusion-steps {args.diffusion_steps}")
        if ckpt.model.fuse_mode == "flatten" and N != ckpt.model.N:
            raise CLIError(f"particle count mismatch: flatten fusion was trained with N={ckpt.model.N}, "
                           f"--particles {N}")
    metric = args.metric or ds.task.metric
    seeds = _seeds(args.seeds)
    report = evaluate_cell(method, ckpt, ds, seeds, N, metric, timing=not args.no_timing)
    report["config"] = {"model": str(args.model), "data": str(args.data), "particles": N,
                        "diffusion_steps": ckpt.model.schedule.K if method == "diffpf" else None,
                        "seeds": seeds, "metric": metric}
    if args.report:
        _write_json(args.report, report)
    if args.export_trajectories:
        export_trajectories(args.export_trajectories, method, ckpt, ds, seeds[0], N)
    v = report["value"]
    print(f"{ds.task.name} {method} {metric}: {v['mean']:.6g} +/- {v['std']:.6g} over {len(seeds)} seeds")


def export_trajectories(path, method, ckpt, ds, seed, N):
    states = ds.split("test")[0]
    res = _run_method(method, ckpt, ds, seed, N, keep_particles=(method == "diffpf"))
    est = res["estimates"]
    d = est.shape[-1]
    parts = res.get("particles")
    header = ["seq", "t"] + [f"est_{j}" for j in range(d)] + [f"gt_{j}" for j in range(d)]
    if parts is not None:
        header += [f"p{i}_{j}" for i in range(parts.shape[2]) for j in range(d)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in range(est.shape[0]):
            for t in range(est.shape[1]):
                row = [s, t] + [repr(float(x)) for x in est[s, t]] + [repr(float(x)) for x in states[s, t]]
                if parts is not None:
                    row += [repr(float(x)) for x in parts[s, t].ravel()]
                w.writerow(row)


# ---------------------------------------------------------------- benchmark


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def cmd_benchmark(args):
    manifest_path = Path(args.models)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    entries = manifest.get("tasks", {})
    tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for t in tasks:
        if t not in TASK_NAMES:
            raise CLIError(f"unknown task {t!r}", code=2)
    for m in methods:
        if m not in METHODS:
            raise CLIError(f"unknown method {m!r}", code=2)
    seeds = _seeds(args.seeds)
    cells = []
    for t in tasks:
        entry = entries.get(t)
        if entry is None or "data" not in entry:
            for m in methods:
                cells.append({"task": t, "method": m, "status": "absent", "reason": "no dataset in manifest"})
            continue
        ds = load_dataset(_resolve(base, entry["data"]))
        for m in methods:
            cell = {"task": t, "method": m}
            if m == "kf":
                if t != "lg":
                    cells.append({**cell, "status": "absent", "reason": "exact oracle exists only for lg"})
                    continue
                ckpt, N = None, None
            else:
                if m not in entry:
                    cells.append({**cell, "status": "absent", "reason": f"no {m} model in manifest"})
                    continue
                ckpt_path = _resolve(base, entry[m])
                if not ckpt_path.exists():
                    cells.append({**cell, "status": "absent", "reason": f"missing checkpoint {entry[m]}"})
                    continue
                ckpt = load_checkpoint(ckpt_path)
                _check_model(ckpt, ds, ckpt_path)
                expected = "diffpf" if m == "diffpf" else "regressor"
                if ckpt.kind != expected:
                    raise CLIError(f"{m} entry for {t} must be a {expected} checkpoint, got {ckpt.kind}")
                N = ckpt.model.N if m == "diffpf" else entry.get("particles", ds.task.default_particles)
            rep = evaluate_cell(m, ckpt, ds, seeds, N, ds.task.metric, timing=not args.no_timing)
            rep["status"] = "ok"
            rep["config"] = {"data": entry["data"], "model": entry.get(m), "particles": N, "seeds": seeds,
                             "diffusion_steps": ckpt.model.schedule.K if m == "diffpf" else None}
            cells.append(rep)
    report = {"manifest": str(manifest_path), "seeds": seeds, "tasks": tasks, "methods": methods, "cells": cells}
    if args.report:
        _write_json(args.report, report)
    for c in cells:
        if c["status"] == "ok":
            hz = c.get("timing", {}).get("hz")
            hz_txt = f"  {hz['mean']:.1f} +/- {hz['std']:.1f} Hz" if hz else ""
            print(f"{c['task']:8s} {c['method']:7s} {c['metric']}: {c['value']['mean']:.6g} "
                  f"+/- {c['value']['std']:.6g}{hz_txt}")
        else:
            print(f"{c['task']:8s} {c['method']:7s} absent ({c['reason']})")


# ---------------------------------------------------------------- entry point


def build_parser():
    p = _Parser(prog="diffpf", description="Diffusion-based particle filtering experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="simulate a dataset directory")
    g.add_argument("--task", required=True, choices=TASK_NAMES)
    g.add_argument("--sequences", type=int, required=True, help="training sequences")
    g.add_argument("--test-sequences", type=int, default=None, help="held-out sequences (default 10%% of training)")
    g.add_argument("--length", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--image-size", type=int, default=None)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train DiffPF (or the regressor used by the bootstrap PF)")
    t.add_argument("--task", default=None, choices=TASK_NAMES)
    t.add_argument("--data", required=True)
    t.add_argument("--phase", type=int, choices=(1, 2), default=1)
    t.add_argument("--from", dest="from_ckpt", default=None)
    t.add_argument("--config", default=None, help="JSON file with TrainConfig fields")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--model", choices=("diffpf", "regressor"), default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="filter held-out sequences and report metrics")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--particles", type=int, default=None)
    e.add_argument("--diffusion-steps", type=int, default=None)
    e.add_argument("--seeds", default="0,1,2")
    e.add_argument("--metric", choices=METRICS, default=None)
    e.add_argument("--report", default=None)
    e.add_argument("--export-trajectories", default=None)
    e.add_argument("--no-timing", action="store_true", help="skip the inference-frequency measurement")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("benchmark", help="compare methods across tasks")
    b.add_argument("--tasks", default=",".join(TASK_NAMES))
    b.add_argument("--methods", default=",".join(METHODS))
    b.add_argument("--models", required=True, help="JSON manifest of datasets and checkpoints")
    b.add_argument("--seeds", default="0,1,2")
    b.add_argument("--report", default=None)
    b.add_argument("--no-timing", action="store_true")
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
