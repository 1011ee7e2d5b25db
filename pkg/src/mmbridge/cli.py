"""Command-line entry point: train / eval / sample / oracle / export-plot.

Every figure-shaped artifact is exported as comma-separated text, never
rendered. Run directories get a manifest listing every output file with its
content hash; identical inputs with --threads 1 reproduce outputs bit-exactly.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from .core import (
    ConfigurationError,
    DataError,
    DivergenceError,
    ReferenceConfig,
    RunConfig,
    SampleBatch,
    TimeGrid,
    load_config,
    seeded_rng,
    worker_rng,
)
from .datasets import (
    DATASET_NAMES,
    MarginalDataset,
    load_snapshot_table,
    make_dataset,
    write_samples_csv,
)
from .imff import (
    BridgeModel,
    evaluate_model,
    generate,
    load_model,
    mm_imf,
    save_model,
    warmup,
)
from .integrate import ode_simulate, path_energy, write_trajectories_csv
from .metrics import moment_track
from .oracle import chain_sinkhorn

DEFAULT_TRAIN_ROWS = 2000
DEFAULT_TEST_ROWS = 1000

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

_LOCK_NAME = ".lock"
_MANIFEST_NAME = "manifest.json"


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunDirectory:
    """Locked output directory that accumulates a file inventory."""

    def __init__(self, path):
        self.path = str(path)
        os.makedirs(self.path, exist_ok=True)
        self.lock_path = os.path.join(self.path, _LOCK_NAME)
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise ConfigurationError(
                f"run directory {self.path} is locked (remove {_LOCK_NAME} if stale)"
            ) from None
        self.started = time.time()
        self.extra: dict = {}

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def unlock(self):
        if os.path.exists(self.lock_path):
            os.remove(self.lock_path)

    def write_manifest(self, config_text: str, seed: int, input_hash: str):
        """Inventory every file in the directory (except the manifest itself)."""
        self.unlock()
        outputs = []
        for name in sorted(os.listdir(self.path)):
            if name == _MANIFEST_NAME:
                continue
            full = os.path.join(self.path, name)
            if os.path.isfile(full):
                outputs.append(
                    {"path": name, "sha256": _sha256_file(full),
                     "bytes": os.path.getsize(full)}
                )
        manifest = {
            "config": config_text,
            "seed": seed,
            "input_hash": input_hash,
            "started_at": self.started,
            "finished_at": time.time(),
            "outputs": outputs,
        }
        manifest.update(self.extra)
        with open(self.file(_MANIFEST_NAME), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_manifest(run_dir) -> dict:
    try:
        with open(os.path.join(run_dir, _MANIFEST_NAME)) as fh:
            return json.load(fh)
    except OSError as err:
        raise DataError(f"missing manifest in {run_dir}: {err}") from err


def _resolve_dataset(spec: str, seed: int) -> MarginalDataset:
    if spec in DATASET_NAMES:
        return make_dataset(spec, DEFAULT_TRAIN_ROWS, DEFAULT_TEST_ROWS, seed)
    if not os.path.exists(spec):
        raise DataError(f"dataset {spec!r} is neither a known name nor a file; "
                        f"known: {', '.join(DATASET_NAMES)}")
    with open(spec, newline="") as fh:
        rows = max(sum(1 for _ in fh) - 1, 0)
    probe = load_snapshot_table(spec)
    min_rows = min(m.shape[0] for m in probe.train)
    withhold = min(DEFAULT_TEST_ROWS, min_rows // 5)
    if withhold < 2:
        raise DataError(f"dataset {spec}: marginals too small to withhold a test split "
                        f"(smallest has {min_rows} of {rows} rows)")
    return load_snapshot_table(spec, test_rows=withhold)


def _load_model(path) -> BridgeModel:
    try:
        return load_model(path)
    except OSError as err:
        raise DataError(f"cannot read checkpoint {path}: {err}") from err
    except ValueError as err:
        raise DataError(str(err)) from err


def _load_config(path) -> tuple:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from err
    from .core import parse_config

    return parse_config(text), text


def _parse_times(text: str):
    try:
        times = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as err:
        raise ConfigurationError(f"bad time list {text!r}: {err}") from err
    if not times:
        raise ConfigurationError("empty time list")
    return times


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    config, config_text = _load_config(args.config)
    if args.seed is not None:
        config = RunConfig(
            grid=config.grid,
            ref=config.ref,
            train=dataclasses.replace(config.train, seed=args.seed),
        )
        config_text = config.to_text()
    seed = config.train.seed
    dataset = _resolve_dataset(args.dataset, seed)

    # surfaces config/data mismatches before any files are written
    from .imff import _check_dataset

    _check_dataset(dataset, config.grid)
    config.train.rows_per_bridge(config.grid.num_intervals)

    if args.dry_run:
        print(f"config ok: {len(config.grid.times)} marginals, "
              f"dataset {dataset.name} (d={dataset.dim}), seed {seed}")
        return EXIT_OK

    run = RunDirectory(args.out)
    try:
        run.extra["dataset"] = args.dataset
        run.extra["threads"] = args.threads
        with open(run.file("config.txt"), "w") as fh:
            fh.write(config_text)

        rng = seeded_rng(seed)
        stream = open(run.file("metrics.ndjson"), "w")

        def emit(record):
            stream.write(json.dumps(record, sort_keys=True) + "\n")
            stream.flush()

        model = warmup(dataset, config, rng=rng)
        for direction in ("forward", "backward"):
            losses = model.history.warmup_losses[direction]
            emit({"iteration": -1, "direction": direction,
                  "loss": float(np.mean(losses[-100:]))})
        save_model(model, run.file("warmup.ckpt"))

        def on_outer(model, n):
            report = evaluate_model(
                model, dataset, sampler="ode", rng=worker_rng(seed, 1_000_000 + n),
                num_projections=64, max_w2_rows=512,
            )
            for rec in model.history.outer_losses[-2:]:
                emit({
                    "iteration": n,
                    "direction": rec["direction"],
                    "loss": float(np.mean(rec["losses"])),
                    "w2": list(report.w2),
                    "mmd": list(report.mmd),
                    "swd": list(report.swd),
                    "path_energy": report.path_energy,
                })
            model.history.metric_records.append(
                {"iteration": n, "swd": list(report.swd), "w2": list(report.w2),
                 "mmd": list(report.mmd), "path_energy": report.path_energy}
            )
            save_model(model, run.file("model.ckpt"))

        mm_imf(model, dataset, config, rng=rng,
               resample_times=args.resample_times,
               cache_endpoints=args.cache_endpoints,
               callback=on_outer)
        save_model(model, run.file("model.ckpt"))
        stream.close()
        run.write_manifest(config_text, seed, _sha256_text(config_text + args.dataset))
    finally:
        run.unlock()
    print(f"trained {dataset.name}: outputs in {run.path}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    model = _load_model(args.model)
    dataset = _resolve_dataset(args.dataset, args.seed)
    from .imff import _check_dataset

    _check_dataset(dataset, model.grid)
    report = evaluate_model(model, dataset, sampler=args.sampler,
                            rng=seeded_rng(args.seed), with_moments=True)
    run = RunDirectory(args.out)
    try:
        with open(run.file("report.txt"), "w") as fh:
            fh.write(report.as_text())
        run.write_manifest("", args.seed, _sha256_file(args.model))
    finally:
        run.unlock()
    print(report.as_text(), end="")
    return EXIT_OK


# ---------------------------------------------------------------- sample

def cmd_sample(args) -> int:
    model = _load_model(args.model)
    dataset = _resolve_dataset(args.dataset, args.seed)
    K = model.grid.num_intervals
    start_index = args.start_index
    if start_index is None:
        start_index = 0 if args.direction == "forward" else K
    source = dataset.test[start_index]
    if source.shape[0] < args.num:
        raise DataError(f"start marginal has only {source.shape[0]} test rows")
    start = SampleBatch(source[: args.num], grid_index=start_index)
    traj = generate(model, start, args.direction, args.sampler,
                    rng=seeded_rng(args.seed))

    run = RunDirectory(args.out)
    try:
        write_trajectories_csv(traj, run.file("trajectories.csv"))
        if args.direction == "forward":
            grid_times = model.grid.times[start_index:]
        else:
            grid_times = tuple(reversed(model.grid.times[: start_index + 1]))
        batches = [traj.states_at_time(t) for t in grid_times]
        write_samples_csv(run.file("samples.csv"), grid_times, batches)
        run.write_manifest("", args.seed, _sha256_file(args.model))
    finally:
        run.unlock()
    print(f"wrote {traj.num_rows} {args.sampler} trajectories to {run.path}")
    return EXIT_OK


# ---------------------------------------------------------------- oracle

def _read_supports_file(path):
    """Rows: marginal index, atom weight, coordinates."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) < 3:
                raise DataError(f"{path}: expected header marginal,weight,x_1..")
            rows = list(reader)
    except OSError as err:
        raise DataError(f"cannot read supports {path}: {err}") from err
    groups: dict = {}
    for rec in rows:
        try:
            m = int(rec[0])
            w = float(rec[1])
            x = [float(v) for v in rec[2:]]
        except ValueError as err:
            raise DataError(f"{path}: bad row {rec!r}: {err}") from err
        groups.setdefault(m, []).append((w, x))
    if not groups or sorted(groups) != list(range(len(groups))):
        raise DataError(f"{path}: marginal indices must be 0..K, got {sorted(groups)}")
    supports, weights = [], []
    for m in sorted(groups):
        ws = np.asarray([w for w, _ in groups[m]])
        if abs(ws.sum() - 1.0) > 1e-6:
            raise DataError(f"{path}: weights of marginal {m} sum to {ws.sum():.6f}, not 1")
        supports.append(np.asarray([x for _, x in groups[m]]))
        weights.append(ws / ws.sum())
    return supports, weights


def cmd_oracle(args) -> int:
    supports, weights = _read_supports_file(args.supports)
    times = _parse_times(args.grid)
    if len(times) != len(supports):
        raise ConfigurationError(
            f"grid has {len(times)} times but supports file has {len(supports)} marginals"
        )
    grid = TimeGrid(times, n_total=2 * (len(times) - 1))
    ref = ReferenceConfig(sigma=args.sigma)
    coupling = chain_sinkhorn(supports, weights, grid, ref,
                              tol=args.tol, max_iter=args.max_iter)

    lines = ["# potentials", "marginal,atom,potential"]
    for m, u in enumerate(coupling.potentials):
        for a, val in enumerate(u):
            lines.append(f"{m},{a},{float(val)!r}")
    for i in range(grid.num_intervals):
        lines.append(f"# pairwise marginal {i}")
        lines.append("row,col,mass")
        table = coupling.pairwise_marginal(i)
        for r in range(table.shape[0]):
            for c in range(table.shape[1]):
                lines.append(f"{r},{c},{float(table[r, c])!r}")
    lines.append("# residuals")
    lines.append("cycle,residual")
    for cyc, res in enumerate(coupling.residuals):
        lines.append(f"{cyc},{float(res)!r}")
    text = "\n".join(lines) + "\n"

    if args.out:
        run = RunDirectory(args.out)
        try:
            with open(run.file("oracle.txt"), "w") as fh:
                fh.write(text)
            run.write_manifest("", 0, _sha256_file(args.supports))
        finally:
            run.unlock()
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- export-plot

def cmd_export_plot(args) -> int:
    model = _load_model(args.model)
    dataset = _resolve_dataset(args.dataset, args.seed)
    times = _parse_times(args.times) if args.times else model.grid.times
    source = dataset.test[0]
    rows = min(args.num, source.shape[0])
    start = source[:rows]

    t_end = max(times)
    traj = ode_simulate(start, model.forward_net, model.backward_net, model.grid,
                        "forward", t_end=t_end if t_end > model.grid.t_end else None)
    axis = traj.shared_times()

    run = RunDirectory(args.out)
    try:
        # (a) drift field on a square grid at each requested time (2-d only)
        if model.dim == 2:
            lo = start.min(axis=0) - 1.0
            hi = start.max(axis=0) + 1.0
            xs = np.linspace(lo[0], hi[0], args.grid_size)
            ys = np.linspace(lo[1], hi[1], args.grid_size)
            XX, YY = np.meshgrid(xs, ys)
            pts = np.column_stack([XX.ravel(), YY.ravel()])
            drift = model.ode_drift()
            for j, t in enumerate(times):
                tq = min(t, model.grid.t_end)  # drift nets are defined on the horizon
                vals = drift(np.full(len(pts), tq), pts)
                with open(run.file(f"quiver_{j}.csv"), "w", newline="") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(["x", "y", "u", "v"])
                    for p, v in zip(pts, vals):
                        writer.writerow([repr(float(p[0])), repr(float(p[1])),
                                         repr(float(v[0])), repr(float(v[1]))])

        # (b) snapshots at the nearest trajectory times
        snap_times, snaps = [], []
        for t in times:
            ji = int(np.argmin(np.abs(axis - t)))
            snap_times.append(float(axis[ji]))
            snaps.append(traj.states[:, ji, :])
        write_samples_csv(run.file("snapshots.csv"), snap_times, snaps)

        # (c) moment curves, single-sourced from moment_track
        curves = moment_track(traj, model.grid)
        with open(run.file("moments.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mean", "variance", "covariance"])
            for t, m, v, c in curves.as_rows():
                writer.writerow([repr(t), repr(m), repr(v), repr(c)])

        run.write_manifest("", args.seed, _sha256_file(args.model))
    finally:
        run.unlock()
    print(f"plot data written to {run.path}")
    return EXIT_OK


# ---------------------------------------------------------------- bench-table1

_BENCH_LABELS = ("moons-single", "moons-multi", "8gaussians-single", "8gaussians-multi")


def cmd_bench_table1(args) -> int:
    runs: dict = {label: [] for label in _BENCH_LABELS}
    for spec in args.run:
        if "=" not in spec:
            raise ConfigurationError(f"--run expects LABEL=DIR, got {spec!r}")
        label, path = spec.split("=", 1)
        if label not in _BENCH_LABELS:
            raise ConfigurationError(f"unknown label {label!r}; known: {_BENCH_LABELS}")
        runs[label].append(path)

    stats: dict = {}
    for label, dirs in runs.items():
        vals = []
        for d in dirs:
            manifest = read_manifest(d)
            model = _load_model(os.path.join(d, "model.ckpt"))
            dataset = _resolve_dataset(manifest["dataset"], manifest["seed"])
            report = evaluate_model(model, dataset, sampler="ode",
                                    rng=seeded_rng(manifest["seed"]))
            vals.append((report.average("w2"), report.path_energy))
        if vals:
            arr = np.asarray(vals)
            stats[label] = {
                "n": len(vals),
                "w2_mean": arr[:, 0].mean(),
                "w2_std": arr[:, 0].std(ddof=1) if len(vals) > 1 else None,
                "energy_mean": arr[:, 1].mean(),
                "energy_std": arr[:, 1].std(ddof=1) if len(vals) > 1 else None,
            }

    def fmt(x):
        return "-" if x is None else f"{x:.4f}"

    lines = ["setting,w2_mean,w2_std,energy_mean,energy_std"]
    for family in ("moons", "8gaussians"):
        single = stats.get(f"{family}-single")
        multi = stats.get(f"{family}-multi")
        if single:
            lines.append(f"{family} single,{fmt(single['w2_mean'])},{fmt(single['w2_std'])},"
                         f"{fmt(single['energy_mean'])},{fmt(single['energy_std'])}")
            lines.append(f"{family} x3,-,-,{fmt(3.0 * single['energy_mean'])},-")
        if multi:
            lines.append(f"{family} multi,{fmt(multi['w2_mean'])},{fmt(multi['w2_std'])},"
                         f"{fmt(multi['energy_mean'])},{fmt(multi['energy_std'])}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmbridge",
        description="Multi-marginal temporal bridge learning and verification tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run warmup + alternating training")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True, help="dataset name or snapshot CSV path")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--resample-times", choices=("outer", "inner"), default="inner")
    p.add_argument("--cache-endpoints", action="store_true")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sampler", choices=("ode", "sde"), default="ode")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="export trajectories from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--direction", choices=("forward", "backward"), default="forward")
    p.add_argument("--sampler", choices=("sde", "ode"), default="sde")
    p.add_argument("--num", type=int, default=512)
    p.add_argument("--start-index", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("oracle", help="solve the discrete chain coupling exactly")
    p.add_argument("--supports", required=True, help="CSV: marginal,weight,x_1..")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--grid", required=True, help="comma-separated marginal times")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("export-plot", help="emit quiver/snapshot/moment data files")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--times", default=None, help="comma-separated snapshot times")
    p.add_argument("--grid-size", type=int, default=20)
    p.add_argument("--num", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_plot)

    p = sub.add_parser("bench-table1", help="aggregate coupling/energy runs")
    p.add_argument("--run", action="append", default=[],
                   help="LABEL=DIR with LABEL in " + ", ".join(_BENCH_LABELS))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench_table1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as err:
        print(f"numeric divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
