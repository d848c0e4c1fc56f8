"""CLI: regenerate one figure from persisted experiment artifacts.

Examples:
  ratiopath-figures --kind criterion --input criterion=out/criterion.csv --out fig.png
  ratiopath-figures --kind trajectory --input trajectory=out/trajectory.csv \
      --input diagnostics=out/diagnostics.json --out traj.png
"""

from __future__ import annotations

import argparse
import sys

from ratiopath_figures.render import FIGURE_KINDS, FigureJob, SchemaError, render


def main(argv=None):
    p = argparse.ArgumentParser(prog="ratiopath-figures", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--kind", required=True, choices=sorted(FIGURE_KINDS))
    p.add_argument("--input", action="append", default=[],
                   metavar="NAME=PATH", help="logical input name and file path")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.add_argument("--no-checksums", action="store_true",
                   help="skip the checksum sidecar JSON")
    args = p.parse_args(argv)

    inputs = {}
    for item in args.input:
        if "=" not in item:
            print(f"error: --input needs NAME=PATH, got {item!r}", file=sys.stderr)
            return 2
        name, path = item.split("=", 1)
        inputs[name] = path
    job = FigureJob(kind=args.kind, inputs=inputs, output=args.out,
                    options={"checksum_sidecar": not args.no_checksums})
    try:
        render(job)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
