"""`optlab-render --run <dir> [--only <kind>]`: figures from a run directory."""
from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, render_all
from .schema import SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="optlab-render")
    parser.add_argument("--run", required=True, help="optlab run directory")
    parser.add_argument("--only", choices=FIGURE_KINDS, help="render one figure kind")
    args = parser.parse_args(argv)
    try:
        written, warnings = render_all(args.run, only=args.only)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
