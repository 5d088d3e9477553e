"""Command line front end for the full record / fit / label / distill /
evaluate pipeline. Every subcommand reads the shared INI run config; any
flag given on the command line overrides the matching config key.
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from microdrive import bench
from microdrive.agents import CEMAgent, ModelAgent, PrivilegedAgent
from microdrive.bicycle import build_windows, fit, position_errors, read_params, write_params
from microdrive.collect import OUNoiseConfig, collect_logs
from microdrive.config import RunConfig, apply_overrides, load_config, save_config
from microdrive.grids import zero_grid
from microdrive.lane_map import COMMAND_BY_NAME, Command, load_map
from microdrive.logs import read_log
from microdrive.policy import build_dataset, init_model, load_model, save_model, train
from microdrive.reward import RewardField
from microdrive.values import (QLabelWriter, backup, build_plan, label_trajectory,
                               read_qlabels, render_value_map)
from microdrive.world import initial_snapshot


@dataclass
class AgentBuilder:
    """Picklable agent factory for parallel episode workers."""
    kind: str                  # "model" | "privileged" | "cem"
    model_path: str | None
    params_path: str | None
    cfg: RunConfig

    def __call__(self, lane_map):
        if self.kind == "model":
            return ModelAgent(lane_map, load_model(self.model_path), self.cfg.control)
        params = read_params(self.params_path)
        if self.kind == "privileged":
            return PrivilegedAgent(lane_map, params, actions=self.cfg.actions,
                                   config=self.cfg.plan, reward_config=self.cfg.reward,
                                   grid_kwargs=self.cfg.grid.kwargs())
        if self.kind == "cem":
            return CEMAgent(lane_map, params, reward_config=self.cfg.reward,
                            config=self.cfg.cem)
        raise ValueError(f"unknown agent kind {self.kind!r}")


def _parse_agent(text: str, params_path, cfg: RunConfig) -> AgentBuilder:
    if text.startswith("model:"):
        return AgentBuilder("model", text[len("model:"):], None, cfg)
    if text in ("privileged", "cem"):
        if params_path is None:
            raise SystemExit(f"--agent {text} needs --params <ego-params file>")
        return AgentBuilder(text, None, params_path, cfg)
    raise SystemExit(f"unknown agent spec {text!r} (model:<path> | privileged | cem)")


def _parse_seeds(text: str):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t != ""]


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    return apply_overrides(cfg, args.set or [])


def _read_logs_dir(path):
    files = sorted(glob.glob(os.path.join(path, "*.worlog")))
    if not files:
        raise SystemExit(f"no .worlog files under {path}")
    return [read_log(f) for f in files]


# -- subcommands ---------------------------------------------------------------

def cmd_collect(args):
    cfg = _load_cfg(args)
    ccfg = cfg.collect
    if args.episodes is not None:
        ccfg = replace(ccfg, episodes=args.episodes)
    if args.npcs is not None:
        ccfg = replace(ccfg, n_npcs=args.npcs)
    if args.seed is not None:
        ccfg = replace(ccfg, seed=args.seed)
    if args.policy is not None:
        ccfg = replace(ccfg, policy=args.policy)
    if args.noise is not None:
        ccfg = replace(ccfg, noise=OUNoiseConfig() if args.noise == "ou" else None)
    lane_map = load_map(args.map or cfg.map_name)
    logs = collect_logs(lane_map, ccfg, out_dir=args.out)
    total = sum(len(l) for l in logs)
    print(f"collected {len(logs)} episodes, {total} decision frames -> {args.out}")


def cmd_fit_ego(args):
    cfg = _load_cfg(args)
    logs = _read_logs_dir(args.logs)
    states = np.concatenate([l.ego for l in logs])
    actions = np.concatenate([l.actions for l in logs])
    bounds = []
    at = 0
    for l in logs:
        bounds.append((at, at + len(l)))
        at += len(l)
    horizon = args.horizon or 10
    s0, aa, tt = build_windows(states, actions, horizon, bounds)
    params, report = fit(s0, aa, tt)
    write_params(params, args.out)
    err = position_errors(params, s0, aa, tt)
    print(f"fit {len(s0)} windows in {report.wall_time_s:.1f}s, "
          f"final loss {report.final_loss:.5f}, "
          f"mean {horizon}-step position error {float(np.mean(err)):.3f} m")
    print(f"wrote {args.out}")


def cmd_label(args):
    cfg = _load_cfg(args)
    params = read_params(args.params)
    os.makedirs(args.out, exist_ok=True)
    files = sorted(glob.glob(os.path.join(args.logs, "*.worlog")))
    if not files:
        raise SystemExit(f"no .worlog files under {args.logs}")
    total = 0
    for path in files:
        log = read_log(path)
        lane_map = load_map(log.map_name)
        base = os.path.splitext(os.path.basename(path))[0]
        out_path = os.path.join(args.out, base + ".worq")
        spec0 = cfg.grid.spec_at(*log.ego[0, :3])
        writer = QLabelWriter(out_path, spec0, cfg.actions, cfg.plan)
        for labels in label_trajectory(log, lane_map, params,
                                       actions=cfg.actions, config=cfg.plan,
                                       reward_config=cfg.reward,
                                       grid_kwargs=cfg.grid.kwargs(),
                                       parallel=args.parallel):
            writer.append(labels)
            total += 1
        writer.close()
        print(f"{path} -> {out_path} ({len(log)} frames)")
    print(f"labeled {total} frames")


def cmd_distill(args):
    cfg = _load_cfg(args)
    dcfg = cfg.distill
    for name in ("alpha", "lr", "epochs", "batch", "seed"):
        val = getattr(args, name)
        if val is not None:
            dcfg = replace(dcfg, **{name: val})
    if args.no_speed_augmentation:
        dcfg = replace(dcfg, use_speed_augmentation=False)
    if args.no_pose_augmentation:
        dcfg = replace(dcfg, use_pose_augmentation=False)
    label_files = sorted(glob.glob(os.path.join(args.labels, "*.worq")))
    if not label_files:
        raise SystemExit(f"no .worq files under {args.labels}")
    logs = _read_logs_dir(args.logs)
    lane_map = load_map(logs[0].map_name)
    dataset = build_dataset([read_qlabels(p) for p in label_files], logs, lane_map,
                            render_replicas=dcfg.use_pose_augmentation)
    model = init_model(seed=dcfg.seed)
    model, report = train(model, dataset, dcfg)
    save_model(model, args.out)
    print(f"trained on {report.n_samples} samples, {len(report.epoch_loss)} epochs, "
          f"final loss {report.epoch_loss[-1]:.4f} ({report.seconds:.1f}s)")
    print(f"wrote {args.out}")


def cmd_drive(args):
    cfg = _load_cfg(args)
    routes = bench.read_routes(args.routes)
    by_name = {r.name: r for r in routes}
    if args.route not in by_name:
        raise SystemExit(f"route {args.route!r} not in {args.routes} "
                         f"(have: {', '.join(sorted(by_name))})")
    route = by_name[args.route]
    lane_map = load_map(route.map_name)
    builder = _parse_agent(args.agent, args.params, cfg)
    agent = builder(lane_map)
    trace = []
    result = bench.run_episode(lane_map, route, agent, args.seed,
                               density=args.density, reward_config=cfg.reward,
                               trace=trace)
    with open(args.out, "w") as f:
        for row in trace:
            f.write(json.dumps(row) + "\n")
        f.write(json.dumps({"result": result.to_record()}) + "\n")
    print(f"{route.name}: success={result.success} completion={result.completion:.2f} "
          f"cause={result.cause} red={result.red_light_violations}")
    print(f"wrote {len(trace)} trace rows -> {args.out}")


def cmd_bench(args):
    cfg = _load_cfg(args)
    routes = bench.read_routes(args.routes)
    densities = [d for d in args.densities.split(",") if d]
    for d in densities:
        for r in routes:
            if d not in r.density_npcs:
                raise SystemExit(f"route {r.name} has no density {d!r}")
    seeds = _parse_seeds(args.seeds)
    builder = _parse_agent(args.agent, args.params, cfg)
    done = []

    def progress(r):
        done.append(r)
        print(f"[{len(done)}] {r.density}/{r.route} seed={r.seed} "
              f"success={r.success} cause={r.cause}", flush=True)

    report = bench.run_suite(routes, builder, densities, seeds,
                             agent_label=args.agent, out_dir=args.out,
                             reward_config=cfg.reward,
                             progress=progress if args.verbose else None,
                             workers=args.workers)
    print(report.table_text(), end="")
    if args.out:
        print(f"report -> {args.out}")


def cmd_render_values(args):
    cfg = _load_cfg(args)
    lane_map = load_map(args.map or cfg.map_name)
    params = read_params(args.params)
    if args.pose is not None:
        x, y, theta = (float(t) for t in args.pose.split(","))
    else:
        lid, s = lane_map.spawn_points[0]
        line = lane_map.lanes[lid].line
        p = line.point_at(np.array([s]))[0]
        x, y = float(p[0]), float(p[1])
        theta = float(line.heading_at(np.array([s]))[0])
    command = COMMAND_BY_NAME[args.command]
    spec = cfg.grid.spec_at(x, y, theta)
    snapshot = initial_snapshot(lane_map, [], tick=args.tick)
    chain = lane_map.build_chain(x, y, theta, command)
    field = RewardField(lane_map, chain, cfg.reward)
    grid = zero_grid(spec)
    plan = build_plan(params, spec, cfg.actions, cfg.plan.dt)
    for _ in range(cfg.plan.horizon):
        result = backup(grid, snapshot, params, cfg.actions, field, cfg.plan,
                        plan=plan)
        grid = result.v
    render_value_map(grid, args.out)
    print(f"rendered value panels at ({x:.1f}, {y:.1f}, {theta:.2f}) -> {args.out}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="microdrive",
        description="record logs, fit the ego model, label action values, "
                    "distill a policy, and benchmark drivers")
    p.add_argument("--config", default=None, help="INI run config path")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    sub = p.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("collect", help="record scripted-traffic driving logs")
    c.add_argument("--map", default=None)
    c.add_argument("--episodes", type=int, default=None)
    c.add_argument("--npcs", type=int, default=None)
    c.add_argument("--policy", choices=("auto", "random"), default=None)
    c.add_argument("--noise", choices=("none", "ou"), default=None,
                   help="steering exploration noise on the recording policy")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--out", required=True, help="log output directory")
    c.set_defaults(func=cmd_collect)

    c = sub.add_parser("fit-ego", help="fit the ego forward model on logs")
    c.add_argument("--logs", required=True)
    c.add_argument("--horizon", type=int, default=None)
    c.add_argument("--out", required=True, help="ego params output file")
    c.set_defaults(func=cmd_fit_ego)

    c = sub.add_parser("label", help="compute dense action values over logs")
    c.add_argument("--logs", required=True)
    c.add_argument("--params", required=True)
    c.add_argument("--out", required=True, help="label output directory")
    c.add_argument("--parallel", action="store_true")
    c.set_defaults(func=cmd_label)

    c = sub.add_parser("distill", help="train the reactive policy on labels")
    c.add_argument("--labels", required=True)
    c.add_argument("--logs", required=True)
    c.add_argument("--out", required=True, help="model output file")
    c.add_argument("--alpha", type=float, default=None)
    c.add_argument("--lr", type=float, default=None)
    c.add_argument("--epochs", type=int, default=None)
    c.add_argument("--batch", type=int, default=None)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--no-speed-augmentation", action="store_true")
    c.add_argument("--no-pose-augmentation", action="store_true")
    c.set_defaults(func=cmd_distill)

    c = sub.add_parser("drive", help="replay one episode to a trace file")
    c.add_argument("--routes", required=True)
    c.add_argument("--route", required=True, help="route name inside the file")
    c.add_argument("--agent", required=True, help="model:<path> | privileged | cem")
    c.add_argument("--params", default=None, help="ego params (privileged/cem)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--density", default="empty")
    c.add_argument("--out", required=True, help="trace jsonl output")
    c.set_defaults(func=cmd_drive)

    c = sub.add_parser("bench", help="evaluate an agent over a route suite")
    c.add_argument("--routes", required=True)
    c.add_argument("--agent", required=True, help="model:<path> | privileged | cem")
    c.add_argument("--params", default=None, help="ego params (privileged/cem)")
    c.add_argument("--densities", default="empty,regular,dense")
    c.add_argument("--seeds", default="0..9", help="e.g. 0..9 or 0,3,7")
    c.add_argument("--out", default=None, help="report directory")
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--verbose", action="store_true")
    c.set_defaults(func=cmd_bench)

    c = sub.add_parser("render-values", help="render value panels to a PNG")
    c.add_argument("--map", default=None)
    c.add_argument("--params", required=True)
    c.add_argument("--pose", default=None, metavar="X,Y,THETA")
    c.add_argument("--command", default="follow_lane",
                   choices=sorted(COMMAND_BY_NAME))
    c.add_argument("--tick", type=int, default=0)
    c.add_argument("--out", required=True, help="PNG output path")
    c.set_defaults(func=cmd_render_values)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
