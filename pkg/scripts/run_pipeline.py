#!/usr/bin/env python3
"""End-to-end pipeline at a chosen scale: record scripted-traffic logs on
the training town, fit the ego model, label every frame with dense action
values, distill the reactive policy, then benchmark it next to the
privileged driver on the builtin route suites.

Everything lands under --workdir so a run can be resumed piecewise; stages
whose outputs already exist are skipped unless --force.
"""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from microdrive.cli import main as cli


def stage(done_path, force, argv):
    if not force and os.path.exists(done_path):
        print(f"skip ({done_path} exists): {' '.join(argv)}")
        return
    print("microdrive " + " ".join(argv), flush=True)
    cli(argv)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="pipeline")
    ap.add_argument("--map", default="town-a")
    ap.add_argument("--episodes", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seeds", default="0..2")
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()
    wd = args.workdir
    os.makedirs(wd, exist_ok=True)

    logs = os.path.join(wd, "logs")
    params = os.path.join(wd, "ego.params")
    labels = os.path.join(wd, "labels")
    model = os.path.join(wd, "model.bin")
    routes = os.path.join(wd, "routes.txt")

    stage(logs, args.force,
          ["collect", "--map", args.map, "--episodes", str(args.episodes),
           "--out", logs])
    stage(params, args.force,
          ["fit-ego", "--logs", logs, "--out", params])
    stage(labels, args.force,
          ["label", "--logs", logs, "--params", params, "--out", labels])
    stage(model, args.force,
          ["distill", "--labels", labels, "--logs", logs,
           "--epochs", str(args.epochs), "--out", model])

    if not os.path.exists(routes):
        from microdrive.bench import builtin_routes, write_routes
        rs = (builtin_routes(args.map, "straight", count=10)
              + builtin_routes(args.map, "turn", count=10))
        write_routes(rs, routes)
        print(f"wrote {len(rs)} routes -> {routes}")

    stage(os.path.join(wd, "report-model"), args.force,
          ["bench", "--routes", routes, "--agent", f"model:{model}",
           "--densities", "empty,regular", "--seeds", args.seeds,
           "--out", os.path.join(wd, "report-model"), "--verbose"])
    stage(os.path.join(wd, "report-privileged"), args.force,
          ["bench", "--routes", routes, "--agent", "privileged",
           "--params", params, "--densities", "empty,regular",
           "--seeds", args.seeds,
           "--out", os.path.join(wd, "report-privileged"), "--verbose"])


if __name__ == "__main__":
    main()
