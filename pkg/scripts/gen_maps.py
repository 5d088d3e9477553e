#!/usr/bin/env python3
"""Write the builtin towns out as map files (useful for editing offshoots)."""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from microdrive.lane_map import load_map, write_map


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="maps", help="output directory")
    ap.add_argument("--names", default="town-a,town-b")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for name in args.names.split(","):
        m = load_map(name)
        path = os.path.join(args.out, f"{name}.map")
        write_map(m, path)
        print(f"{name}: {len(m.lanes)} lanes, {len(m.lights)} lights -> {path}")


if __name__ == "__main__":
    main()
