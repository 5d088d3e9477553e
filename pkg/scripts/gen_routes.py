#!/usr/bin/env python3
"""Generate the builtin straight/turn route suites as ROUTES files."""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from microdrive.bench import builtin_routes, write_routes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="routes", help="output directory")
    ap.add_argument("--maps", default="town-a,town-b")
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for name in args.maps.split(","):
        for kind in ("straight", "turn"):
            routes = builtin_routes(name, kind, count=args.count, seed=args.seed)
            path = os.path.join(args.out, f"{name}-{kind}.routes")
            write_routes(routes, path)
            print(f"{name} {kind}: {len(routes)} routes -> {path}")


if __name__ == "__main__":
    main()
