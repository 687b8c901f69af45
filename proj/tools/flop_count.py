#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Recount the theoretical speedup of a generate run from its depth maps.

Each token at each scale costs one unit per transformer block it passes
through. Scales without a depth map run every block.

usage: flop_count.py REPORT_JSON [--min X] [--max Y]
"""

import argparse
import json
import sys


def count(report):
    layers = report["num_layers"]
    dense = 0
    used = 0
    for scale in report["scales"]:
        tokens = scale["height"] * scale["width"]
        dense += tokens * layers
        if "depth" in scale:
            used += sum(sum(row) for row in scale["depth"])
        else:
            used += tokens * layers
    return dense, used


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("report")
    parser.add_argument("--min", type=float, default=None)
    parser.add_argument("--max", type=float, default=None)
    args = parser.parse_args()

    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    dense, used = count(report)
    speedup = dense / used
    reported = float(report["speedup"])
    print(f"dense cost {dense}, masked cost {used}, speedup {speedup:.6f}x, reported {reported:.6f}x")

    ok = abs(speedup - reported) <= 1e-9 * speedup
    if not ok:
        print("recounted speedup disagrees with the report", file=sys.stderr)
    if args.min is not None and speedup < args.min:
        print(f"speedup below {args.min}", file=sys.stderr)
        ok = False
    if args.max is not None and speedup > args.max:
        print(f"speedup above {args.max}", file=sys.stderr)
        ok = False
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
