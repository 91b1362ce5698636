"""Command-line interface: ``sgpps train | eval | plotdata``.

Exit codes: 0 success, 2 bad input (config, snapshot, arguments),
3 numerical abort during training. ``GPPS_LOG=debug|info`` sets the log
level.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .envs import make_env
from .modeseeking import ModeSeekingSGPPolicy
from .trainer import (
    ConfigError,
    ExperimentConfig,
    NumericalAbort,
    evaluate,
    is_fitted,
    load_policy,
    run,
)

logger = logging.getLogger("sgpps")


class InputError(Exception):
    """Unusable command input; reported on stderr with exit code 2."""


def _configure_logging():
    level = os.environ.get("GPPS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_train(args):
    path = Path(args.config)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise InputError(f"config {path} is not UTF-8 text") from None
    config = ExperimentConfig.from_toml(text)
    if args.seed is not None:
        config.seed = args.seed
    out = Path(args.out or config.output_dir or f"runs/{path.stem}-seed{config.seed}")
    config.output_dir = str(out)
    config.validate()
    snap_dir = out / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)

    manifest = {
        "config_path": str(path),
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "seed": config.seed,
        "version": __version__,
        "output_dir": str(out),
        "started": _now(),
        "finished": None,
    }
    _dump(manifest, out / "manifest.json")

    def on_iteration(it, snap, curve):
        _dump(snap, snap_dir / f"iter_{it:03d}.json")

    try:
        result = run(config, on_iteration=on_iteration)
    except NumericalAbort as exc:
        print(f"numerical abort at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return 3
    with open(out / "curve.csv", "w", newline="") as fh:
        result.curve.write_csv(fh)
    with open(out / "timing.csv", "w", newline="") as fh:
        result.curve.write_timing(fh)
    _dump(result.snapshots[-1], out / "final_snapshot.json")
    manifest["finished"] = _now()
    manifest["iterations"] = len(result.curve)
    _dump(manifest, out / "manifest.json")
    print(json.dumps({"output_dir": str(out), "iterations": len(result.curve)}))
    return 0


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None


def _load_snapshot(path):
    snap = _load_json(path)
    if not isinstance(snap, dict):
        raise InputError(f"{path} is not a policy snapshot")
    try:
        policy = load_policy(snap)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path} is not a usable policy snapshot: {exc}") from None
    return snap, policy


def cmd_eval(args):
    snap, policy = _load_snapshot(args.snapshot)
    env_kwargs = snap.get("env", {}) if snap.get("task") == args.task else {}
    try:
        env = make_env(args.task, random_state=args.seed, **env_kwargs)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if env.state_dim != snap["state_dim"] or env.action_dim != snap["action_dim"]:
        raise InputError(
            f"dimension mismatch: snapshot has state_dim={snap['state_dim']}, action_dim={snap['action_dim']}; "
            f"task {args.task!r} has state_dim={env.state_dim}, action_dim={env.action_dim}"
        )
    if args.n < 1:
        raise InputError("--n must be at least 1")
    mean_return, success = evaluate(policy, env, args.n, rng=args.seed)
    print(json.dumps({"task": args.task, "n": args.n, "mean_return": mean_return, "success_rate": success}))
    return 0


def _write_rows(header, rows):
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else int(v) for v in row])


def _policy_slice(snap, policy, n_grid, action_dim):
    if not is_fitted(policy):
        raise InputError("policy_slice needs a trained policy snapshot")
    Z = policy.pseudo_inputs_
    if snap["task"] == "hand-posture" and Z.shape[1] == 1:
        grid = np.linspace(-np.pi, np.pi, n_grid, endpoint=False)
    else:
        grid = np.linspace(Z[:, 0].min(), Z[:, 0].max(), n_grid)
    X = np.tile(Z.mean(axis=0), (n_grid, 1))
    X[:, 0] = grid
    if isinstance(policy, ModeSeekingSGPPolicy):
        mean, var = policy.predict_dist(X)
        means, sds = mean[:, action_dim : action_dim + 1], np.sqrt(var[:, action_dim : action_dim + 1])
    else:
        mean, var = policy.predict_components(X)
        means, sds = mean[:, :, action_dim], np.sqrt(var)
    M = means.shape[1]
    header = ["state"] + [f"{k}_{m + 1}" for m in range(M) for k in ("mean", "std")]
    rows = [[g] + [v for m in range(M) for v in (means[i, m], sds[i, m])] for i, g in enumerate(grid)]
    return header, rows


def cmd_plotdata(args):
    kind = args.kind
    if kind == "curve":
        try:
            with open(args.file, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise InputError(f"cannot read {args.file}: {exc.strerror}") from None
        if not rows or rows[0][:2] != ["iteration", "mean_return"]:
            raise InputError(f"{args.file} is not a learning-curve CSV")
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerows(rows)
        return 0
    snap, policy = _load_snapshot(args.file)
    modeseeking = isinstance(policy, ModeSeekingSGPPolicy)
    if kind == "policy_slice":
        if not 0 <= args.action_dim < snap["action_dim"]:
            raise InputError(f"--action-dim must be in [0, {snap['action_dim']})")
        header, rows = _policy_slice(snap, policy, args.grid, args.action_dim)
    elif kind == "pseudo_inputs":
        if not is_fitted(policy):
            raise InputError("pseudo_inputs needs a trained policy snapshot")
        Z = policy.pseudo_inputs_
        header, rows = [f"s{d}" for d in range(Z.shape[1])], Z.tolist()
    elif kind == "responsibilities":
        if modeseeking or not is_fitted(policy):
            raise InputError("responsibilities needs a trained multimodal or unimodal snapshot")
        R = policy.posterior_.resp
        header = ["n", "m", "pi"]
        rows = [[n, m + 1, R[n, m]] for n in range(R.shape[0]) for m in range(R.shape[1])]
    elif kind == "reliabilities":
        if not modeseeking or not is_fitted(policy):
            raise InputError("reliabilities needs a trained mode-seeking snapshot")
        T = policy.reliabilities_
        header = ["n", "dim", "reliability"]
        rows = [[n, d, T[n, d]] for d in range(T.shape[1]) for n in range(T.shape[0])]
    else:  # argparse restricts the choices; kept for direct calls
        raise InputError(f"unsupported kind {kind!r}")
    _write_rows(header, rows)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="sgpps", description="Sparse Gaussian process policy search.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run an experiment from a TOML config")
    t.add_argument("config")
    t.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    t.add_argument("--out", default=None, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a snapshot")
    e.add_argument("snapshot")
    e.add_argument("task", help="hand-posture or table-sweep")
    e.add_argument("--n", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("plotdata", help="CSV data behind policy and learning-curve plots")
    d.add_argument("file")
    d.add_argument(
        "--kind", required=True, choices=["policy_slice", "responsibilities", "reliabilities", "curve", "pseudo_inputs"]
    )
    d.add_argument("--grid", type=int, default=200, help="grid points for policy_slice")
    d.add_argument("--action-dim", type=int, default=0)
    d.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None):
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # downstream closed early (e.g. ``| head``); not an error
        sys.stderr.close()
        return 0


if __name__ == "__main__":
    sys.exit(main())
