"""CLI: plot populations|yields --in <csv...> --out <file>."""

from __future__ import annotations

import argparse
import sys

from .io import SchemaError
from .plots import plot_populations, plot_yields


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render figures from run CSV outputs"
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind, helptext in [
        ("populations", "orbital populations vs time, one panel per trace"),
        ("yields", "ion yield vs intensity, one curve per series"),
    ]:
        p = sub.add_parser(kind, help=helptext)
        p.add_argument("--in", dest="inputs", nargs="+", required=True,
                       help="input CSV file(s)")
        p.add_argument("--out", required=True, help="output image file (svg/pdf/png)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.kind == "populations":
            out = plot_populations(args.inputs, args.out)
        else:
            out = plot_yields(args.inputs, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
