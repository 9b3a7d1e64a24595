"""render: one figure per invocation, from CSV to image file.

Exit codes: 0 drawn (including "no data" placeholders), 2 usage or I/O
error, 4 schema mismatch.
"""

from __future__ import annotations

import argparse
import sys

from .csvio import SchemaMismatch
from .figures import KINDS, FigureRequest, render


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render", description="Draw a figure from a simulation CSV.")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="source", required=True,
                        help="input CSV (schema must match the kind)")
    parser.add_argument("--bounds", default=None,
                        help="bounds CSV for threshold annotations")
    parser.add_argument("--out", required=True,
                        help="output image path (.svg or .png)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    request = FigureRequest(kind=args.kind, source=args.source,
                            out=args.out, bounds=args.bounds)
    try:
        render(request)
    except SchemaMismatch as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return 4
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
