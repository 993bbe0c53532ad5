"""Figure builders for optlab artifacts.

Every figure validates all of its inputs before a single artist is drawn,
so a schema violation can never leave a partial image behind.  Rendering
is deterministic: fixed rcParams, a pinned SVG hash salt, and no embedded
timestamps.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import SchemaError, Table, load_csv, load_json, load_manifest

FIGURE_KINDS = (
    "trajectory",
    "train_accuracy",
    "train_triptych",
    "flatness",
    "escape",
    "sweep",
)

# Fig. 2 convention: a star where the walk begins, a circle where it ends.
START_MARKER = "*"
END_MARKER = "o"

DEFAULT_SERIES_STYLE = {
    "adam": {"color": "#d62728"},
    "adamw": {"color": "#9467bd"},
    "invadam": {"color": "#1f77b4"},
    "dualadam": {"color": "#2ca02c"},
}

_DETERMINISTIC_RC = {
    "svg.hashsalt": "optlab",
    "figure.dpi": 110,
    "savefig.dpi": 110,
}


@dataclass
class FigureSpec:
    """What to draw: figure kind, validated input files, output stem."""

    kind: str
    inputs: list
    output: Path
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    xlim: tuple | None = None
    ylim: tuple | None = None
    series_style: dict = field(default_factory=lambda: dict(DEFAULT_SERIES_STYLE))

    def __post_init__(self) -> None:
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; valid: {FIGURE_KINDS}")
        self.inputs = [Path(p) for p in self.inputs]
        self.output = Path(self.output)


def _style(spec: FigureSpec, name: str) -> dict:
    return spec.series_style.get(name, {"color": "#7f7f7f"})


def _series_name(path: Path) -> str:
    match = re.match(r"trajectory_(.+)_s(\d+)$", path.stem) or re.match(
        r"train_(.+)_s(\d+)$", path.stem
    )
    if not match:
        raise SchemaError(path, "cannot parse optimizer/seed from filename")
    return match.group(1), int(match.group(2))


def _apply_labels(ax, spec: FigureSpec) -> None:
    if spec.title:
        ax.set_title(spec.title)
    if spec.xlabel:
        ax.set_xlabel(spec.xlabel)
    if spec.ylabel:
        ax.set_ylabel(spec.ylabel)
    if spec.xlim:
        ax.set_xlim(*spec.xlim)
    if spec.ylim:
        ax.set_ylim(*spec.ylim)


def _contour_grid(table: Table):
    xs = np.unique(table["x"])
    ys = np.unique(table["y"])
    if len(xs) * len(ys) != table.n_rows:
        raise SchemaError(table.path, "contour samples do not form a full grid")
    grid = table["loss"].reshape(len(ys), len(xs))
    return xs, ys, grid


def build_trajectory_figure(spec: FigureSpec):
    contour_tables = [load_csv(p) for p in spec.inputs if p.name.startswith("contour")]
    trajectory_paths = [p for p in spec.inputs if p.name.startswith("trajectory_") and p.suffix == ".csv"]
    if not contour_tables:
        raise SchemaError(spec.output, "trajectory figure needs a contour.csv input")
    if not trajectory_paths:
        raise SchemaError(spec.output, "trajectory figure needs trajectory CSV inputs")
    trajectories = [(p, load_csv(p)) for p in trajectory_paths]

    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    xs, ys, grid = _contour_grid(contour_tables[0])
    ax.contourf(xs, ys, grid, levels=30, cmap="viridis", alpha=0.75)
    ax.contour(xs, ys, grid, levels=12, colors="white", linewidths=0.4, alpha=0.5)
    seen = set()
    for path, table in trajectories:
        optimizer, _ = _series_name(path)
        style = _style(spec, optimizer)
        label = optimizer if optimizer not in seen else None
        seen.add(optimizer)
        ax.plot(table["x"], table["y"], lw=1.2, label=label, **style)
        ax.plot(
            table["x"][0], table["y"][0], START_MARKER,
            color="red", markersize=13, markeredgecolor="black", zorder=5,
        )
        ax.plot(
            table["x"][-1], table["y"][-1], END_MARKER,
            color="black", markersize=7, zorder=5,
        )
    ax.legend(loc="upper right")
    _apply_labels(ax, spec)
    if not spec.xlabel:
        ax.set_xlabel("x")
    if not spec.ylabel:
        ax.set_ylabel("y")
    return fig


def _grouped_runs(spec: FigureSpec):
    groups: dict[str, list[Table]] = {}
    for path in spec.inputs:
        optimizer, _ = _series_name(path)
        groups.setdefault(optimizer, []).append(load_csv(path))
    if not groups:
        raise SchemaError(spec.output, "no train CSV inputs")
    return groups


def build_train_accuracy_figure(spec: FigureSpec):
    groups = _grouped_runs(spec)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for optimizer, tables in sorted(groups.items()):
        style = _style(spec, optimizer)
        curves = np.stack([t["test_acc"] for t in tables])
        epochs = tables[0]["epoch"]
        for curve in curves:
            ax.plot(epochs, curve, alpha=0.25, lw=0.7, **style)
        ax.plot(epochs, curves.mean(axis=0), lw=2.0, label=optimizer, **style)
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.legend(loc="lower right")
    _apply_labels(ax, spec)
    return fig


def build_train_triptych_figure(spec: FigureSpec):
    groups = _grouped_runs(spec)
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.6))
    panels = (("train_loss", "training loss"), ("val_loss", "validation loss"), ("gen_gap", "generalization gap"))
    for ax, (column, label) in zip(axes, panels):
        for optimizer, tables in sorted(groups.items()):
            style = _style(spec, optimizer)
            curves = np.stack([t[column] for t in tables])
            ax.plot(tables[0]["epoch"], curves.mean(axis=0), lw=1.8, label=optimizer, **style)
        ax.set_xlabel("epoch")
        ax.set_ylabel(label)
    axes[0].legend(loc="upper right")
    fig.tight_layout()
    return fig


def build_flatness_figure(spec: FigureSpec):
    slices = [load_csv(p) for p in spec.inputs if p.suffix == ".csv"]
    if not slices:
        raise SchemaError(spec.output, "flatness figure needs slice CSV inputs")
    reports = [load_json(p) for p in spec.inputs if p.suffix == ".json"]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for table in slices:
        ax.plot(table["zeta"], table["loss"], lw=1.8)
    ax.set_xlabel("perturbation scale")
    ax.set_ylabel("loss")
    if reports:
        top = reports[0].get("top_eigenvalues", [])
        if top:
            eigs = ", ".join(f"{value:.3g}" for value in top)
            ax.text(
                0.02, 0.98, f"top eigenvalues: {eigs}",
                transform=ax.transAxes, va="top", fontsize=8,
            )
    _apply_labels(ax, spec)
    return fig


def build_escape_figure(spec: FigureSpec):
    table = load_csv(spec.inputs[0])
    dynamics = sorted(set(table["dynamics"]))
    fig, (ax_med, ax_ratio) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    series = {}
    for name in dynamics:
        mask = np.array([d == name for d in table["dynamics"]])
        hs = table["H_phi"][mask]
        medians = table["median_steps"][mask]
        order = np.argsort(hs)
        series[name] = (hs[order], medians[order])
        ax_med.plot(hs[order], medians[order], "o-", label=name, **_style(spec, name))
    ax_med.set_xscale("log", base=2)
    ax_med.set_yscale("log")
    ax_med.set_xlabel("well curvature")
    ax_med.set_ylabel("median escape steps")
    ax_med.legend()
    if len(series) == 2 and "adam" in series and "invadam" in series:
        hs = series["adam"][0]
        ratio = series["invadam"][1] / series["adam"][1]
        ax_ratio.plot(hs, ratio, "s-", color="#333333")
        ax_ratio.axhline(1.0, color="gray", lw=0.8, ls="--")
        ax_ratio.set_xscale("log", base=2)
        ax_ratio.set_xlabel("well curvature")
        ax_ratio.set_ylabel("product/quotient median ratio")
    fig.tight_layout()
    return fig


def build_sweep_figure(spec: FigureSpec):
    table = load_csv(spec.inputs[0])
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    if "switching_rate" in table.columns:
        rates = table["switching_rate"]
        ax.errorbar(
            np.arange(len(rates)),
            table["val_acc_mean"],
            yerr=table["val_acc_std"],
            fmt="o-",
            capsize=3,
        )
        ax.set_xticks(np.arange(len(rates)))
        ax.set_xticklabels([f"{r:g}" for r in rates], rotation=45, fontsize=8)
        ax.set_xlabel("switching rate")
    else:
        labels = [f"{m}\n{p}" for m, p in zip(table["mechanism"], table["param"])]
        ax.bar(np.arange(len(labels)), table["val_acc_mean"], yerr=table["val_acc_std"], capsize=3)
        ax.set_xticks(np.arange(len(labels)))
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_xlabel("switching mechanism")
    ax.set_ylabel("validation accuracy")
    _apply_labels(ax, spec)
    fig.tight_layout()
    return fig


_BUILDERS = {
    "trajectory": build_trajectory_figure,
    "train_accuracy": build_train_accuracy_figure,
    "train_triptych": build_train_triptych_figure,
    "flatness": build_flatness_figure,
    "escape": build_escape_figure,
    "sweep": build_sweep_figure,
}


def build(spec: FigureSpec):
    """Validate every input, then build the matplotlib figure."""
    for path in spec.inputs:
        if not path.exists():
            raise SchemaError(path, "file does not exist")
    with plt.rc_context(_DETERMINISTIC_RC):
        return _BUILDERS[spec.kind](spec)


def render(spec: FigureSpec) -> list[Path]:
    """Build and save the figure as PNG and SVG next to the output stem.

    Inputs are fully parsed before anything is written, so a bad input
    never leaves a partial image on disk.
    """
    fig = build(spec)
    written = []
    try:
        with plt.rc_context(_DETERMINISTIC_RC):
            for suffix in (".png", ".svg"):
                target = spec.output.with_suffix(suffix)
                metadata = {"Date": None} if suffix == ".svg" else {}
                fig.savefig(target, metadata=metadata)
                written.append(target)
    finally:
        plt.close(fig)
    return written


def render_all(run_dir, only: str | None = None) -> tuple[list[Path], list[str]]:
    """Render every known artifact family in a run directory.

    Dispatches on the manifest's subcommand; returns (written files,
    warnings for skipped unknown families).
    """
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    subcommand = manifest.get("subcommand")
    outputs = [run_dir / name for name in manifest.get("outputs", [])]
    specs: list[FigureSpec] = []
    warnings: list[str] = []
    if subcommand == "trajectory":
        specs.append(
            FigureSpec(
                kind="trajectory",
                inputs=[p for p in outputs if p.suffix == ".csv"],
                output=run_dir / "fig_trajectory",
            )
        )
    elif subcommand == "train":
        train_csvs = [p for p in outputs if re.match(r"train_.+_s\d+\.csv$", p.name)]
        specs.append(
            FigureSpec(kind="train_accuracy", inputs=train_csvs, output=run_dir / "fig_accuracy")
        )
        specs.append(
            FigureSpec(kind="train_triptych", inputs=train_csvs, output=run_dir / "fig_losses")
        )
    elif subcommand == "hessian":
        inputs = [p for p in outputs if p.name == "slice.csv"]
        inputs += [p for p in outputs if p.name == "hessian_report.json"]
        specs.append(FigureSpec(kind="flatness", inputs=inputs, output=run_dir / "fig_flatness"))
    elif subcommand == "escape":
        specs.append(
            FigureSpec(
                kind="escape",
                inputs=[run_dir / "escape_summary.csv"],
                output=run_dir / "fig_escape",
            )
        )
    elif subcommand == "sweep":
        table = next(
            (p for p in outputs if p.name in ("sweep_rates.csv", "sweep_mechanisms.csv")), None
        )
        if table is None:
            warnings.append("sweep run directory has no sweep table")
        else:
            specs.append(FigureSpec(kind="sweep", inputs=[table], output=run_dir / "fig_sweep"))
    else:
        warnings.append(f"unknown artifact family {subcommand!r}: skipped")
    if only is not None:
        specs = [s for s in specs if s.kind == only]
    written: list[Path] = []
    for spec in specs:
        written.extend(render(spec))
    return written, warnings
