"""Run-directory plumbing: deterministic CSV/JSON writers and the manifest.

CSV artifacts use `.` decimals, LF line endings, and no quoting; floats
are formatted with repr (shortest round-trip), so identical runs produce
byte-identical files.  Every run directory gets a manifest.json written
exactly once, last, listing the config snapshot and every artifact.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ARTIFACT_VERSION = "1"


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Strict reader: returns (header, rows); every row must match the header width."""
    path = Path(path)
    with open(path, "r") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines:
        raise ValueError(f"{path}: empty CSV")
    header = lines[0].split(",")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ValueError(
                f"{path}: row {i} has {len(cells)} cells, header has {len(header)}"
            )
        rows.append(cells)
    return header, rows


def write_json(path, payload: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, "r") as fh:
        return json.load(fh)


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seeds: list[int]
    outputs: list[str] = field(default_factory=list)
    duration_seconds: float = 0.0
    artifact_version: str = ARTIFACT_VERSION

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "duration_seconds": self.duration_seconds,
            "artifact_version": self.artifact_version,
        }


def new_run_dir(root, slug: str) -> Path:
    """Create a fresh timestamp+slug directory under root; never reuses one."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    candidate = root / f"{stamp}-{slug}"
    counter = 1
    while candidate.exists():
        counter += 1
        candidate = root / f"{stamp}-{slug}-{counter}"
    candidate.mkdir()
    return candidate


class RunWriter:
    """Collects artifacts for one run directory and finalizes the manifest."""

    def __init__(self, run_dir: Path, subcommand: str, config: dict, seeds: list[int]):
        self.run_dir = Path(run_dir)
        self.manifest = RunManifest(subcommand=subcommand, config=config, seeds=seeds)
        self._start = time.monotonic()
        self._finalized = False

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def record(self, name: str) -> Path:
        if self._finalized:
            raise RuntimeError("manifest already written; run is closed")
        self.manifest.outputs.append(name)
        return self.path(name)

    def write_csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
        target = self.record(name)
        write_csv(target, columns, rows)
        return target

    def write_json(self, name: str, payload: dict) -> Path:
        target = self.record(name)
        write_json(target, payload)
        return target

    def finalize(self) -> Path:
        """Write manifest.json exactly once, after all artifacts."""
        if self._finalized:
            raise RuntimeError("manifest already written")
        self.manifest.duration_seconds = time.monotonic() - self._start
        write_json(self.run_dir / "manifest.json", self.manifest.to_dict())
        self._finalized = True
        return self.run_dir / "manifest.json"


# Artifact CSV schemas by filename prefix, shared with the --check validator
# and the offline renderer.
CSV_SCHEMAS = {
    "trajectory_": ("step", "x", "y", "loss", "alpha", "update_norm"),
    "contour": ("x", "y", "loss"),
    "train_": ("epoch", "train_loss", "val_loss", "test_acc", "gen_gap", "alpha"),
    "train_summary": ("optimizer", "mean_acc", "std_acc", "mean_gap"),
    "escape_summary": ("H_phi", "dynamics", "median_steps", "mean_steps", "censoring_rate"),
    "sweep_rates": (
        "switching_rate",
        "train_loss_mean",
        "train_loss_std",
        "val_acc_mean",
        "val_acc_std",
    ),
    "sweep_mechanisms": (
        "mechanism",
        "param",
        "train_loss_mean",
        "train_loss_std",
        "val_acc_mean",
        "val_acc_std",
    ),
    "slice": ("zeta", "loss"),
}


def schema_for(filename: str):
    """Longest-prefix schema match for a CSV artifact name, or None."""
    best = None
    for prefix, columns in CSV_SCHEMAS.items():
        if filename.startswith(prefix):
            if best is None or len(prefix) > len(best[0]):
                best = (prefix, columns)
    return best[1] if best else None


def check_run_dir(run_dir) -> list[str]:
    """Validate manifest presence, listed files, and CSV schemas.

    Returns a list of problems; empty means the run directory is valid.
    """
    run_dir = Path(run_dir)
    problems: list[str] = []
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        return [f"missing manifest: {manifest_path}"]
    manifest = read_json(manifest_path)
    for key in ("subcommand", "config", "seeds", "outputs", "artifact_version"):
        if key not in manifest:
            problems.append(f"manifest missing key {key!r}")
    if manifest.get("artifact_version") != ARTIFACT_VERSION:
        problems.append(
            f"artifact_version {manifest.get('artifact_version')!r} != {ARTIFACT_VERSION!r}"
        )
    for name in manifest.get("outputs", []):
        target = run_dir / name
        if not target.exists():
            problems.append(f"listed output missing: {name}")
            continue
        if name.endswith(".csv"):
            expected = schema_for(name)
            if expected is None:
                problems.append(f"no schema registered for CSV {name}")
                continue
            try:
                header, _ = read_csv(target)
            except ValueError as exc:
                problems.append(str(exc))
                continue
            if tuple(header) != tuple(expected):
                problems.append(
                    f"{name}: header {header} != schema {list(expected)}"
                )
    return problems
