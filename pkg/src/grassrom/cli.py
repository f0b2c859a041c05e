"""Command-line interface: ``grassrom <command> [options]``.

Commands
--------
gen-data       write a dataset CSV (toy dynamical system or noisy ridge)
train          fit one model; writes model, trace CSV and manifest
compare-inits  per-epoch RelError percentiles for the three basis initializers
sweep          median minimum RelError over a (k, h) grid
bowtie         paired comparison against the unconstrained bowtie network

Option values resolve as built-in defaults < ``--config`` file (flat
``key = value`` lines) < command-line flags. ``GRASSROM_SEED`` supplies the
seed when neither a config file nor ``--seed`` does.

Exit codes: 0 success, 2 usage, 3 data contract, 4 numerical failure.
"""
import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, dynsys, ridgenet, trainer
from .dataset import read_csv, write_csv
from .exceptions import DataContractError, GradientDataRequired, NumericalError

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


def _count(text):
    v = float(text)
    return int(v) if v >= 1 and v == int(v) else v


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _u_init(text):
    v = str(text).replace("-", "_")
    if v not in trainer.U_INITS + ("auto",):
        raise argparse.ArgumentTypeError(f"invalid u-init {text!r}")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be a nonnegative integer, got {text}")
    return v


# name: (type, default); flags expose these as --name-with-dashes
TRAIN_OPTIONS = {
    "k": (_positive, 2),
    "h": (_positive, 8),
    "lambda_reg": (float, 1e-7),
    "lr": (float, 1e-3),
    "outer": (_positive, 10),
    "n_theta": (_nonneg, 5000),
    "batch_size": (_positive, 16),
    "batch_unit": (str, "auto"),
    "u_init": (_u_init, "auto"),
    "n_train": (_count, 0.8),
    "n_val": (_count, 0.2),
    "subspace_max_iters": (_positive, 100),
    "subspace_tol": (float, 1e-6),
    "patience": (_positive, None),
    "seed": (int, None),
    "jobs": (_positive, 1),
}
LIST_OPTIONS = {
    "ks": (_ints, [1, 2, 3]),
    "hs": (_ints, [8, 64, 256]),
    "trials": (_positive, 10),
    "schemes": (lambda s: [_u_init(v) for v in str(s).split(",")],
                ["identity", "random", "active_subspace"]),
}


def _read_config(path):
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _resolve(args, table):
    vals = {k: d for k, (_, d) in table.items()}
    if getattr(args, "config", None):
        for key, raw in _read_config(args.config).items():
            if key not in table:
                raise UsageError(f"unknown config key {key!r}")
            try:
                vals[key] = table[key][0](raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
    for key in table:
        if hasattr(args, key):
            vals[key] = getattr(args, key)
    if "seed" in vals and vals["seed"] is None:
        vals["seed"] = int(os.environ.get("GRASSROM_SEED", 0))
    return vals


def _add_options(p, table):
    for key, (typ, default) in table.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ,
                       default=argparse.SUPPRESS,
                       help=f"(default: {default})")


def _config_from(vals, u_init=None):
    return trainer.TrainConfig(
        k=vals["k"], h=vals["h"], lambda_reg=vals["lambda_reg"], lr=vals["lr"],
        outer_iters=vals["outer"], inner_iters=vals["n_theta"],
        batch_size=vals["batch_size"], batch_unit=vals["batch_unit"],
        seed=vals["seed"], u_init=u_init or vals["u_init"],
        n_train=vals["n_train"], n_val=vals["n_val"],
        subspace_tol=vals["subspace_tol"],
        subspace_max_iters=vals["subspace_max_iters"], patience=vals["patience"])


def _auto_init(u_init, data):
    if u_init == "auto":
        return "active_subspace" if data.has_jacobians else "random"
    if u_init == "active_subspace" and not data.has_jacobians:
        raise GradientDataRequired(
            "--u-init active-subspace needs Jacobian columns (df_i_j) in the dataset")
    return u_init


def _trial_seeds(master, n):
    return [int(s) for s in np.random.SeedSequence(master).generate_state(n)]


def _write_manifest(path, command, config, data, artifacts, started):
    manifest = {
        "tool": "grassrom",
        "version": __version__,
        "command": command,
        "config": config,
        "dataset": None if data is None else data.fingerprint(),
        "artifacts": sorted(set(str(a) for a in artifacts)),
        "timings": {"wall_seconds": round(time.perf_counter() - started, 3)},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def _dry_run(command, vals, data):
    print(json.dumps({"command": command, "config": vals,
                      "dataset": None if data is None else data.fingerprint()},
                     indent=2, sort_keys=True, default=str))
    return 0


# -- gen-data -------------------------------------------------------------

def cmd_gen_data(args):
    started = time.perf_counter()
    seed = args.seed if args.seed is not None else int(os.environ.get("GRASSROM_SEED", 0))
    if args.noisy_ridge:
        cfg = {"kind": "noisy_ridge", "n_points": args.n_points, "m": args.m,
               "k_true": args.k_true, "noise": args.noise, "seed": seed}
    else:
        center = _floats(args.center)
        if len(center) != 3:
            raise UsageError("--center needs three comma-separated values")
        cfg = {"kind": "toy", "n_traj": args.n_traj, "center": center,
               "width": args.width, "t_end": args.t_end, "n_stamps": args.n_stamps,
               "seed": seed}
    if args.dry_run:
        return _dry_run("gen-data", cfg, None)
    if args.noisy_ridge:
        data, _ = dynsys.make_noisy_ridge(args.n_points, args.m, args.k_true,
                                          args.noise, seed)
    else:
        data = dynsys.generate_trajectories(args.n_traj, cfg["center"], args.width,
                                            args.t_end, args.n_stamps, seed)
    out = Path(args.out)
    write_csv(data, out)
    print(f"samples: {data.n_samples}")
    if args.split:
        a, b = _split_arg(args.split)
        tr, va, _ = trainer.split_dataset(data, a, b, seed=seed)
        cfg["split"] = [a, b]
        print(f"train: {tr.n_samples}")
        print(f"validation: {va.n_samples}")
    manifest = out.with_name(out.name + ".manifest.json")
    _write_manifest(manifest, "gen-data", cfg, data, [out, manifest], started)
    return 0


def _split_arg(text):
    parts = [p for p in str(text).split(",") if p.strip()]
    if len(parts) != 2:
        raise UsageError("--split needs TRAIN,VAL")
    return _count(parts[0]), _count(parts[1])


# -- train ----------------------------------------------------------------

def cmd_train(args):
    started = time.perf_counter()
    vals = _resolve(args, TRAIN_OPTIONS)
    data = read_csv(args.data)
    vals["u_init"] = _auto_init(vals["u_init"], data)
    cfg = _config_from(vals)
    if args.dry_run:
        return _dry_run("train", cfg.to_dict(), data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path, trace_path, manifest = out / "model.txt", out / "trace.csv", out / "manifest.json"
    try:
        trace = trainer.alternating_fit(data, cfg)
    except NumericalError as exc:
        if exc.trace is not None:
            exc.trace.write_csv(trace_path)
        _write_manifest(manifest, "train", cfg.to_dict(), data, [trace_path, manifest],
                        started)
        raise
    sub_path = out / "subspace.csv"
    ridgenet.dump_model(trace.params, trace.basis, model_path)
    trace.write_csv(trace_path)
    trainer.write_subspace_csv(trace, sub_path)
    _write_manifest(manifest, "train", cfg.to_dict(), data,
                    [model_path, trace_path, sub_path, manifest], started)
    print(f"final val_relerror: {trace.final_val_relerror():.6g}")
    return 0


# -- multi-trial commands ---------------------------------------------------

def _run_trial(task):
    kind, data, cfg = task
    if kind == "bowtie":
        return trainer.bowtie_fit(data, cfg)
    return trainer.alternating_fit(data, cfg)


def _trial_common(args):
    table = dict(TRAIN_OPTIONS, **LIST_OPTIONS)
    vals = _resolve(args, table)
    data = read_csv(args.data)
    return vals, data


def cmd_compare_inits(args):
    started = time.perf_counter()
    vals, data = _trial_common(args)
    schemes = vals["schemes"]
    if "active_subspace" in schemes and not data.has_jacobians:
        raise GradientDataRequired("active-subspace scheme needs Jacobian columns")
    if args.dry_run:
        return _dry_run("compare-inits", vals, data)
    seeds = _trial_seeds(vals["seed"], vals["trials"])
    tasks = [("alt", data, _config_from(dict(vals, seed=s), u_init=sch))
             for sch in schemes for s in seeds]
    traces = _map(_run_trial, tasks, vals["jobs"])

    out = Path(args.out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    artifacts = []
    rows = []
    for i, sch in enumerate(schemes):
        block = traces[i * len(seeds):(i + 1) * len(seeds)]
        for t, (s, tr) in enumerate(zip(seeds, block)):
            path = out / "traces" / f"{sch}_trial{t:03d}.csv"
            tr.write_csv(path)
            sub = out / "traces" / f"{sch}_trial{t:03d}_subspace.csv"
            trainer.write_subspace_csv(tr, sub)
            artifacts += [path, sub]
        errs = np.array([tr.val_relerrors for tr in block])
        pct = np.percentile(errs, [25, 50, 75], axis=0)
        for e in range(errs.shape[1]):
            rows.append((sch, e + 1, *pct[:, e]))
        print(f"{sch}: median final val_relerror {pct[1, -1]:.6g}")
    summary = out / "summary.csv"
    _write_rows(summary, ["scheme", "epoch", "p25", "p50", "p75"], rows)
    manifest = out / "manifest.json"
    _write_manifest(manifest, "compare-inits", vals, data,
                    artifacts + [summary, manifest], started)
    return 0


def _write_rows(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def cmd_sweep(args):
    started = time.perf_counter()
    vals, data = _trial_common(args)
    vals["u_init"] = _auto_init(vals["u_init"], data)
    if args.dry_run:
        return _dry_run("sweep", vals, data)
    seeds = _trial_seeds(vals["seed"], vals["trials"])
    grid = [(k, h) for k in vals["ks"] for h in vals["hs"]]
    tasks = [("alt", data, _config_from(dict(vals, k=k, h=h, seed=s)))
             for k, h in grid for s in seeds]
    traces = _map(_run_trial, tasks, vals["jobs"])
    rows = []
    for i, (k, h) in enumerate(grid):
        mins = [tr.min_val_relerror() for tr in traces[i * len(seeds):(i + 1) * len(seeds)]]
        rows.append((k, h, float(np.median(mins))))
        print(f"k={k} h={h}: median min val_relerror {rows[-1][2]:.6g}")
    out = Path(args.out)
    _write_rows(out, ["k", "h", "median_min_relerror"], rows)
    manifest = out.with_name(out.name + ".manifest.json")
    _write_manifest(manifest, "sweep", vals, data, [out, manifest], started)
    return 0


def cmd_bowtie(args):
    started = time.perf_counter()
    vals, data = _trial_common(args)
    vals["u_init"] = _auto_init(vals["u_init"], data)
    if args.dry_run:
        return _dry_run("bowtie", vals, data)
    seeds = _trial_seeds(vals["seed"], vals["trials"])
    grid = [(k, h) for k in vals["ks"] for h in vals["hs"]]
    tasks = []
    for k, h in grid:
        for kind in ("alt", "bowtie"):
            tasks += [(kind, data, _config_from(dict(vals, k=k, h=h, seed=s)))
                      for s in seeds]
    traces = _map(_run_trial, tasks, vals["jobs"])
    rows = []
    T = len(seeds)
    for i, (k, h) in enumerate(grid):
        chunk = traces[2 * i * T:2 * (i + 1) * T]
        ours = float(np.median([tr.min_val_relerror() for tr in chunk[:T]]))
        bow = float(np.median([tr.min_val_relerror() for tr in chunk[T:]]))
        ratio = bow / ours
        rows.append(("grassmann", k, h, ours, ratio))
        rows.append(("bowtie", k, h, bow, ratio))
        print(f"k={k} h={h}: grassmann {ours:.6g} bowtie {bow:.6g} ratio {ratio:.4g}")
    out = Path(args.out)
    _write_rows(out, ["model", "k", "h", "median_relerror", "ratio"], rows)
    manifest = out.with_name(out.name + ".manifest.json")
    _write_manifest(manifest, "bowtie", vals, data, [out, manifest], started)
    return 0


# -- parser ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="grassrom", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"grassrom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a dataset CSV")
    kind = g.add_mutually_exclusive_group()
    kind.add_argument("--toy", action="store_true", help="cubic 3-D system (default)")
    kind.add_argument("--noisy-ridge", action="store_true", help="synthetic scalar ridge")
    g.add_argument("--n-traj", type=_positive, default=500)
    g.add_argument("--center", default="4,3,-2")
    g.add_argument("--width", type=float, default=dynsys.TOY_WIDTH)
    g.add_argument("--t-end", type=float, default=dynsys.TOY_T_END)
    g.add_argument("--n-stamps", type=_positive, default=dynsys.TOY_N_STAMPS)
    g.add_argument("--n-points", type=_positive, default=500)
    g.add_argument("--m", type=_positive, default=18)
    g.add_argument("--k-true", type=_positive, default=3)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--split", help="TRAIN,VAL sizes to report (trajectories or points)")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--dry-run", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    def common(p, lists=False):
        p.add_argument("--data", required=True, help="dataset CSV")
        p.add_argument("--config", help="flat key = value file")
        p.add_argument("--dry-run", action="store_true")
        _add_options(p, TRAIN_OPTIONS)
        if lists:
            _add_options(p, LIST_OPTIONS)

    t = sub.add_parser("train", help="fit one model")
    common(t)
    t.add_argument("--out-dir", default="run")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare-inits", help="compare basis initializers")
    common(c, lists=True)
    c.add_argument("--out-dir", default="compare")
    c.set_defaults(func=cmd_compare_inits)

    s = sub.add_parser("sweep", help="(k, h) grid")
    common(s, lists=True)
    s.add_argument("--out", default="sweep.csv")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bowtie", help="compare against the bowtie network")
    common(b, lists=True)
    b.add_argument("--out", default="bowtie.csv")
    b.set_defaults(func=cmd_bowtie)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (GradientDataRequired, DataContractError) as exc:
        print(f"grassrom: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"grassrom: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"grassrom: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"grassrom: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
