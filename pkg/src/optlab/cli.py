"""`optlab run <subcommand>`: every experiment behind one entry point.

Each invocation creates a fresh timestamp+slug run directory under the
output root (--out, $OPTLAB_RUNS, or ./runs), writes CSV/JSON artifacts,
and finishes with manifest.json.  `--check` validates an existing run
directory instead of executing.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import analysis, escape, landscape, nn
from .config import (
    ConfigError,
    as_list,
    load_config,
    optimizer_config_from,
    parse_seed_spec,
    validate_keys,
)
from .landscape import NoiseModel
from .optim import OPTIMIZERS, Schedule
from .runio import RunWriter, check_run_dir, new_run_dir

SUBCOMMANDS = ("trajectory", "train", "hessian", "escape", "sweep")

# Table-style default grid for the switching-rate sweep; rate_scale maps it
# onto desk-scale iteration counts while preserving the switch fractions.
DEFAULT_SWEEP_RATES = [0.0] + [i * 1e-5 for i in range(1, 11)]
DEFAULT_EXP_BASES = [0.8, 0.9, 0.99]
DEFAULT_FIXED_EPOCHS = [10, 30, 50]


def _noise_from(flat: dict, default_kind: str, default_sigma: float, default_b: int) -> NoiseModel:
    return NoiseModel(
        kind=flat.get("noise.kind", default_kind),
        sigma=float(flat.get("noise.sigma", default_sigma)),
        batch_size=int(flat.get("noise.batch_size", default_b)),
    )


def _landscape_from(flat: dict) -> landscape.Landscape:
    name = flat.get("landscape", "two_basin")
    if name == "two_basin":
        return landscape.two_basin()
    if name == "eggholder":
        return landscape.eggholder()
    if name == "quadratic":
        return landscape.quadratic()
    raise ConfigError(
        f"unknown landscape {name!r}; valid: two_basin, eggholder, quadratic"
    )


_DEFAULT_STARTS = {
    "two_basin": (-1.15, 0.0),
    "eggholder": (0.0, 0.0),
    "quadratic": (1.0, 1.0),
}


def _run_tasks(tasks, worker, jobs: int):
    """Map worker over tasks, in order, optionally with a process pool."""
    if jobs <= 1:
        return [worker(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


def _trajectory_task(task):
    flat, optimizer, seed = task
    surface = _landscape_from(flat)
    start = flat.get("start", _DEFAULT_STARTS[surface.name])
    cfg = optimizer_config_from(flat, optimizer)
    noise = _noise_from(flat, "isotropic_gaussian", 0.05, 32)
    return landscape.run_trajectory(
        surface,
        cfg,
        (float(start[0]), float(start[1])),
        noise,
        max_steps=int(flat.get("max_steps", 5000)),
        seed=seed,
        classify_radius=float(flat.get("classify_radius", 1.0)),
    )


def cmd_trajectory(flat: dict, seeds: list[int], writer: RunWriter, jobs: int) -> bool:
    optimizers = [str(o) for o in as_list(flat.get("optimizer", ["adam", "invadam"]))]
    for name in optimizers:
        if name not in OPTIMIZERS:
            raise ConfigError(
                f"unknown optimizer {name!r}; valid optimizers: {', '.join(OPTIMIZERS)}"
            )
    surface = _landscape_from(flat)
    tasks = [(flat, opt, seed) for opt in optimizers for seed in seeds]
    results = _run_tasks(tasks, _trajectory_task, jobs)
    diverged = False
    for (_, opt, seed), traj in zip(tasks, results):
        landscape.write_trajectory_csv(traj, writer.record(f"trajectory_{opt}_s{seed}.csv"))
        landscape.write_trajectory_sidecar(traj, writer.record(f"trajectory_{opt}_s{seed}.json"))
        diverged |= traj.diverged
    mesh = int(flat.get("contour_mesh", 101))
    xmin, xmax, ymin, ymax = surface.domain
    xs = np.linspace(xmin, xmax, mesh)
    ys = np.linspace(ymin, ymax, mesh)
    writer.write_csv(
        "contour.csv",
        ("x", "y", "loss"),
        ((x, y, surface.loss(x, y)) for y in ys for x in xs),
    )
    return diverged


def _dataset_from(flat: dict) -> nn.Dataset:
    name = flat.get("dataset", "two_moons")
    n = int(flat.get("n", 200))
    noise_sigma = float(flat.get("data_noise", 0.25))
    data_seed = int(flat.get("data_seed", 0))
    if name == "two_moons":
        return nn.make_two_moons(n, noise_sigma, data_seed)
    if name == "spirals":
        return nn.make_spirals(n, int(flat.get("classes", 3)), noise_sigma, data_seed)
    raise ConfigError(f"unknown dataset {name!r}; valid: two_moons, spirals")


def _network_from(flat: dict, dataset: nn.Dataset, seed: int) -> nn.Network:
    layers = [int(v) for v in as_list(flat.get("layers", [2, 16, 16, dataset.n_classes]))]
    if layers[-1] != dataset.n_classes:
        raise ConfigError(
            f"layers output width {layers[-1]} != dataset classes {dataset.n_classes}"
        )
    activation = flat.get("activation", "tanh")
    init_seed = int(flat.get("init_seed", seed))
    return nn.make_network(layers, activation, init_seed)


def _total_iterations(flat: dict, dataset: nn.Dataset) -> int:
    epochs = int(flat.get("epochs", 60))
    batch_size = int(flat.get("batch_size", 16))
    n_train = dataset.train_idx.shape[0]
    batches = (n_train + batch_size - 1) // batch_size
    return epochs * batches


def _train_task(task):
    flat, optimizer, seed, schedule_fields = task
    dataset = _dataset_from(flat)
    net = _network_from(flat, dataset, seed)
    schedule = Schedule(**schedule_fields) if schedule_fields else None
    cfg = optimizer_config_from(
        flat, optimizer, total_iterations=_total_iterations(flat, dataset), schedule=schedule
    )
    run = nn.train(
        net,
        dataset,
        cfg,
        epochs=int(flat.get("epochs", 60)),
        batch_size=int(flat.get("batch_size", 16)),
        seed=seed,
    )
    val_x, val_y = dataset.split("val")
    with np.errstate(over="ignore", invalid="ignore"):
        val_acc = nn.accuracy(net, val_x, val_y, run.final_params)
    return run, val_acc, net.layer_sizes, net.activation


def cmd_train(flat: dict, seeds: list[int], writer: RunWriter, jobs: int) -> bool:
    optimizers = [str(o) for o in as_list(flat.get("optimizer", ["adam", "dualadam"]))]
    tasks = [(flat, opt, seed, None) for opt in optimizers for seed in seeds]
    results = _run_tasks(tasks, _train_task, jobs)
    diverged = False
    summary_rows = []
    by_opt: dict[str, list] = {opt: [] for opt in optimizers}
    for (_, opt, seed, _), (run, _, layer_sizes, activation) in zip(tasks, results):
        nn.write_trainrun_csv(run, writer.record(f"train_{opt}_s{seed}.csv"))
        prefix = writer.path(f"params_{opt}_s{seed}")
        net = nn.Network(layer_sizes, activation, run.final_params)
        nn.save_params(prefix, net, seed, run.final_params)
        writer.manifest.outputs.extend(
            [f"params_{opt}_s{seed}.txt", f"params_{opt}_s{seed}.json"]
        )
        by_opt[opt].append(run)
        diverged |= run.diverged
    for opt in optimizers:
        accs = np.array([run.test_acc[-1] for run in by_opt[opt]])
        gaps = np.array([run.gen_gap[-1] for run in by_opt[opt]])
        summary_rows.append(
            (opt, float(accs.mean()), float(accs.std()), float(gaps.mean()))
        )
    writer.write_csv(
        "train_summary.csv", ("optimizer", "mean_acc", "std_acc", "mean_gap"), summary_rows
    )
    return diverged


def cmd_hessian(flat: dict, seeds: list[int], writer: RunWriter, jobs: int) -> bool:
    zeta_grid = np.linspace(
        float(flat.get("zeta_min", -1.0)),
        float(flat.get("zeta_max", 1.0)),
        int(flat.get("zeta_points", 41)),
    )
    slice_seed = int(flat.get("slice_seed", seeds[0]))
    if flat.get("fixture") == "quadratic":
        surface = landscape.quadratic()
        report = analysis.hessian_report_2d(surface, (0.0, 0.0))
        slc = analysis.flatness_slice(
            lambda th: surface.loss(th[0], th[1]), np.zeros(2), zeta_grid, slice_seed
        )
    else:
        prefix = flat.get("params_prefix")
        if prefix is None:
            raise ConfigError("hessian needs either fixture=quadratic or params_prefix")
        for suffix in (".txt", ".json"):
            if not os.path.exists(f"{prefix}{suffix}"):
                raise ConfigError(f"saved parameter file not found: {prefix}{suffix}")
        net, _ = nn.load_params(prefix)
        dataset = _dataset_from(flat)
        train_x, train_y = dataset.split("train")

        def grad_fn(theta):
            return nn.loss_and_grad(net, train_x, train_y, theta)[1]

        def loss_fn(theta):
            return nn.loss_and_grad(net, train_x, train_y, theta)[0]

        report = analysis.hessian_report(
            grad_fn,
            net.params,
            k=int(flat.get("top_k", 2)),
            iters=int(flat.get("power_iters", 100)),
            probes=int(flat.get("probes", 32)),
            seed=seeds[0],
        )
        slc = analysis.flatness_slice(loss_fn, net.params, zeta_grid, slice_seed)
    writer.write_json("hessian_report.json", report.to_dict())
    writer.write_json("flatness_slice.json", slc.to_dict())
    analysis.write_slice_csv(slc, writer.record("slice.csv"))
    return False


def cmd_escape(flat: dict, seeds: list[int], writer: RunWriter, jobs: int) -> bool:
    grid = [float(h) for h in as_list(flat.get("sharpness_grid", [1.0, 2.0, 4.0, 8.0]))]
    dynamics = [str(d) for d in as_list(flat.get("optimizer", ["adam", "invadam"]))]
    for name in dynamics:
        if name not in escape.ESCAPE_DYNAMICS:
            raise ConfigError(
                f"unknown escape dynamics {name!r}; valid: {', '.join(escape.ESCAPE_DYNAMICS)}"
            )
    noise = _noise_from(flat, "curvature_scaled", 0.5, 1)
    base_cfg = optimizer_config_from(
        {"lr": flat.get("lr", 0.05), **{k: flat[k] for k in ("beta1", "beta2", "eps") if k in flat}},
        "adam",
    )
    trials = int(flat.get("trials", 200))
    max_steps = int(flat.get("max_steps", 20000))
    delta_l = float(flat.get("delta_l", 0.005))
    h_chi = float(flat.get("saddle_curvature", 1.0))
    seed = seeds[0]
    grids: dict[str, list] = {name: [] for name in dynamics}
    summary_rows = []
    for h_phi in grid:
        potential = escape.make_barrier(h_phi, delta_l, h_chi)
        for name in dynamics:
            stats = escape.run_escape(
                potential, name, noise, base_cfg, max_steps=max_steps, trials=trials, seed=seed
            )
            grids[name].append((h_phi, stats))
            summary_rows.append((h_phi, name, stats))
            writer.write_json(f"escape_stats_H{h_phi:g}_{name}.json", stats.to_dict())
    escape.write_escape_summary_csv(summary_rows, writer.record("escape_summary.csv"))
    fit_payload: dict = {}
    for name in dynamics:
        try:
            fit = escape.scaling_fit(grids[name], escape.FIT_EXPONENTS[name])
            fit_payload[name] = fit.to_dict()
        except ValueError as exc:
            fit_payload[name] = {"error": str(exc)}
    if set(dynamics) == set(escape.ESCAPE_DYNAMICS):
        hs, ratios = escape.median_ratio_by_sharpness(grids["adam"], grids["invadam"])
        confidence = escape.bootstrap_ratio_decreasing(
            grids["adam"],
            grids["invadam"],
            n_boot=int(flat.get("bootstrap_samples", 1000)),
            seed=seed,
        )
        fit_payload["ratio"] = {
            "sharpness": [float(h) for h in hs],
            "median_ratio": [float(r) for r in ratios],
            "nonincreasing_bootstrap_confidence": confidence,
        }
    writer.write_json("scaling_fit.json", fit_payload)
    return False


def _sweep_task(task):
    flat, schedule_fields, seed = task
    return _train_task((flat, "dualadam", seed, schedule_fields))


def cmd_sweep(flat: dict, seeds: list[int], writer: RunWriter, jobs: int) -> bool:
    mode = flat.get("mode", "rates")
    sweep_flat = dict(flat)
    sweep_flat.setdefault("dataset", "spirals")
    sweep_flat.setdefault("epochs", 40)
    sweep_flat.setdefault("batch_size", 32)
    if mode == "rates":
        rates = [float(r) for r in as_list(flat.get("rates", DEFAULT_SWEEP_RATES))]
        scale = float(flat.get("rate_scale", 1.0))
        cells = [
            (f"{rate:g}", {"kind": "linear", "rate": rate * scale}) for rate in rates
        ]
        if not cells:
            raise ConfigError("rate sweep grid is empty")
        columns = (
            "switching_rate",
            "train_loss_mean",
            "train_loss_std",
            "val_acc_mean",
            "val_acc_std",
        )
        filename = "sweep_rates.csv"
        labels = [(label,) for label, _ in cells]
    elif mode == "mechanisms":
        cells = []
        labels = []
        for rate in [float(r) for r in as_list(flat.get("rates", [5e-5, 8e-5, 1e-4]))]:
            scale = float(flat.get("rate_scale", 1.0))
            cells.append((None, {"kind": "linear", "rate": rate * scale}))
            labels.append(("linear", f"{rate:g}"))
        for base in [float(b) for b in as_list(flat.get("exp_bases", DEFAULT_EXP_BASES))]:
            cells.append((None, {"kind": "exponential", "base": base}))
            labels.append(("exponential", f"{base:g}"))
        for ep in [int(e) for e in as_list(flat.get("fixed_epochs", DEFAULT_FIXED_EPOCHS))]:
            cells.append((None, {"kind": "fixed_epoch", "switch_epoch": ep}))
            labels.append(("fixed_epoch", str(ep)))
        if not cells:
            raise ConfigError("mechanism sweep grid is empty")
        columns = (
            "mechanism",
            "param",
            "train_loss_mean",
            "train_loss_std",
            "val_acc_mean",
            "val_acc_std",
        )
        filename = "sweep_mechanisms.csv"
    else:
        raise ConfigError(f"unknown sweep mode {mode!r}; valid: rates, mechanisms")

    tasks = [
        (sweep_flat, schedule_fields, seed) for _, schedule_fields in cells for seed in seeds
    ]
    results = _run_tasks(tasks, _sweep_task, jobs)
    diverged = any(run.diverged for run, _, _, _ in results)
    rows = []
    per_seed = len(seeds)
    for i, label in enumerate(labels):
        chunk = results[i * per_seed : (i + 1) * per_seed]
        losses = np.array([run.train_loss[-1] for run, _, _, _ in chunk])
        accs = np.array([acc for _, acc, _, _ in chunk])
        rows.append(
            label
            + (
                float(losses.mean()),
                float(losses.std()),
                float(accs.mean()),
                float(accs.std()),
            )
        )
    writer.write_csv(filename, columns, rows)
    return diverged


COMMANDS = {
    "trajectory": cmd_trajectory,
    "train": cmd_train,
    "hessian": cmd_hessian,
    "escape": cmd_escape,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="optlab")
    sub = parser.add_subparsers(dest="verb", required=True)
    run_parser = sub.add_parser("run", help="run an experiment subcommand")
    run_parser.add_argument("subcommand", choices=SUBCOMMANDS)
    run_parser.add_argument("--config", help="key=value config file")
    run_parser.add_argument("--seeds", help="seed spec: 'a..b', 'a,b,c', or 'n'")
    run_parser.add_argument("--out", help="output root (default $OPTLAB_RUNS or ./runs)")
    run_parser.add_argument("--jobs", type=int, default=1)
    run_parser.add_argument(
        "--check",
        action="store_true",
        help="validate the run directory given by --out instead of executing",
    )
    args = parser.parse_args(argv)

    if args.check:
        if not args.out:
            print("--check needs --out pointing at a run directory", file=sys.stderr)
            return 1
        problems = check_run_dir(args.out)
        for problem in problems:
            print(f"check: {problem}", file=sys.stderr)
        print(f"{args.out}: {'OK' if not problems else f'{len(problems)} problem(s)'}")
        return 0 if not problems else 1

    try:
        flat = load_config(args.config) if args.config else {}
        validate_keys(flat, args.subcommand)
        if args.seeds:
            seeds = parse_seed_spec(args.seeds)
        else:
            seeds = [int(s) for s in as_list(flat.get("seed", 0))]
        out_root = args.out or os.environ.get("OPTLAB_RUNS", "runs")
        run_dir = new_run_dir(out_root, args.subcommand)
        writer = RunWriter(run_dir, args.subcommand, dict(flat), seeds)
        diverged = COMMANDS[args.subcommand](flat, seeds, writer, max(1, args.jobs))
        writer.finalize()
        print(run_dir)
        expect_diverged = bool(flat.get("expect_diverged", False))
        if diverged and not expect_diverged:
            print("run flagged diverged unexpectedly", file=sys.stderr)
            return 1
        return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
