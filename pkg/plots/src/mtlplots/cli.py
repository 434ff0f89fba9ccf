"""CLI: render figures from sweep/trajectory CSVs per a JSON figure spec."""

from __future__ import annotations

import argparse
import sys

from .figspec import FigureSpec, FigureSpecError
from .render import render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mtlplots")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure from a JSON spec")
    p.add_argument("--spec", required=True, help="path to the figure spec JSON")
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return 2 if err.code not in (0,) else 0
    try:
        spec = FigureSpec.from_file(args.spec)
        out = render(spec)
    except (FigureSpecError, OSError) as err:
        print(f"render failed: {err}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
