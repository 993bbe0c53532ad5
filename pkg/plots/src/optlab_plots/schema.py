"""Strict parsing of optlab run-directory artifacts.

The renderer is a separate offline component: it reads only the CSV/JSON
files and pins their schemas to the manifest's artifact version.  Parsing
is unforgiving by design; any missing column, extra cell, or non-numeric
value fails loudly with the file, row, and column named.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SUPPORTED_ARTIFACT_VERSION = "1"

# column name -> parsed type ("f" float, "s" string), by filename prefix
CSV_SCHEMAS: dict[str, tuple[tuple[str, str], ...]] = {
    "trajectory_": (
        ("step", "f"),
        ("x", "f"),
        ("y", "f"),
        ("loss", "f"),
        ("alpha", "f"),
        ("update_norm", "f"),
    ),
    "contour": (("x", "f"), ("y", "f"), ("loss", "f")),
    "train_": (
        ("epoch", "f"),
        ("train_loss", "f"),
        ("val_loss", "f"),
        ("test_acc", "f"),
        ("gen_gap", "f"),
        ("alpha", "f"),
    ),
    "train_summary": (
        ("optimizer", "s"),
        ("mean_acc", "f"),
        ("std_acc", "f"),
        ("mean_gap", "f"),
    ),
    "escape_summary": (
        ("H_phi", "f"),
        ("dynamics", "s"),
        ("median_steps", "f"),
        ("mean_steps", "f"),
        ("censoring_rate", "f"),
    ),
    "sweep_rates": (
        ("switching_rate", "f"),
        ("train_loss_mean", "f"),
        ("train_loss_std", "f"),
        ("val_acc_mean", "f"),
        ("val_acc_std", "f"),
    ),
    "sweep_mechanisms": (
        ("mechanism", "s"),
        ("param", "s"),
        ("train_loss_mean", "f"),
        ("train_loss_std", "f"),
        ("val_acc_mean", "f"),
        ("val_acc_std", "f"),
    ),
    "slice": (("zeta", "f"), ("loss", "f")),
}


class SchemaError(ValueError):
    """Parse failure that names the offending file, row, and column."""

    def __init__(self, file, message: str, row: int | None = None, column: str | None = None):
        self.file = str(file)
        self.row = row
        self.column = column
        where = self.file
        if row is not None:
            where += f", row {row}"
        if column is not None:
            where += f", column {column!r}"
        super().__init__(f"{where}: {message}")


def schema_for(filename: str):
    best = None
    for prefix, columns in CSV_SCHEMAS.items():
        if filename.startswith(prefix) and (best is None or len(prefix) > len(best[0])):
            best = (prefix, columns)
    return best[1] if best else None


@dataclass
class Table:
    """One parsed CSV: float columns as arrays, string columns as lists."""

    path: Path
    columns: dict

    def __getitem__(self, name: str):
        return self.columns[name]

    @property
    def n_rows(self) -> int:
        first = next(iter(self.columns.values()))
        return len(first)


def load_csv(path) -> Table:
    path = Path(path)
    if not path.exists():
        raise SchemaError(path, "file does not exist")
    schema = schema_for(path.name)
    if schema is None:
        raise SchemaError(path, "no schema registered for this artifact name")
    text = path.read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SchemaError(path, "empty file")
    header = lines[0].split(",")
    expected = [name for name, _ in schema]
    if header != expected:
        mismatch = next((e for h, e in zip(header, expected) if h != e), None)
        if mismatch is None:  # same prefix, different length
            mismatch = expected[-1] if len(header) < len(expected) else header[len(expected)]
        raise SchemaError(
            path,
            f"header {header} does not match schema {expected}",
            row=1,
            column=mismatch,
        )
    if len(lines) == 1:
        raise SchemaError(path, "no data rows")
    raw_columns: dict[str, list] = {name: [] for name, _ in schema}
    for row_number, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(schema):
            raise SchemaError(
                path,
                f"expected {len(schema)} cells, found {len(cells)}",
                row=row_number,
            )
        for cell, (name, kind) in zip(cells, schema):
            if kind == "f":
                try:
                    raw_columns[name].append(float(cell))
                except ValueError:
                    raise SchemaError(
                        path,
                        f"non-numeric value {cell!r}",
                        row=row_number,
                        column=name,
                    ) from None
            else:
                raw_columns[name].append(cell)
    columns = {
        name: np.array(raw_columns[name]) if kind == "f" else raw_columns[name]
        for name, kind in schema
    }
    return Table(path=path, columns=columns)


def load_manifest(run_dir) -> dict:
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(manifest_path, "missing manifest")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    version = manifest.get("artifact_version")
    if version != SUPPORTED_ARTIFACT_VERSION:
        raise SchemaError(
            manifest_path,
            f"artifact version {version!r} is not supported "
            f"(renderer pins {SUPPORTED_ARTIFACT_VERSION!r})",
        )
    return manifest


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise SchemaError(path, "file does not exist")
    with open(path) as fh:
        return json.load(fh)
