"""Route-based evaluation harness with NoCrash-style metrics.

Routes are lane-id paths with an arc-length command schedule. An episode
steps the reactive world at 20 Hz with action repeat 5, terminates on goal,
collision, route deviation, or a timeout computed from the route length at
a 5 km/h cruise, and counts red-light crossings. The timeout clock excludes
decisions spent stopped inside a zero-speed region, so waiting at a red
light never burns route budget.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from microdrive.geometry import Polyline, obb_overlap_depth
from microdrive.lane_map import (COMMAND_BY_NAME, COMMAND_NAMES, Command, LaneMap,
                                 LightPhase, _STRAIGHT_MAX, _TURN_MIN, load_map)
from microdrive.reward import RewardConfig, ZoneKind, zero_speed_region
from microdrive.world import (CONTROL_PERIOD, DECISION_DT, EGO_HALF_LEN, EGO_HALF_WID,
                              EgoState, WorldMode, initial_snapshot, light_phases_at,
                              spawn_npcs, step_ego_ground_truth, step_world)

CRUISE_TIMEOUT_MPS = 5.0 / 3.6      # NoCrash budget speed: 5 km/h
GOAL_RADIUS = 3.0
COLLISION_DEPTH = 0.05
DEVIATION_MARGIN = 3.0
STOPPED_V = 0.1

DENSITY_NPCS = {"empty": 0, "regular": 6, "dense": 14}


@dataclass
class RouteSpec:
    name: str
    map_name: str
    lane_ids: list
    start_s: float
    goal_s: float
    schedule: list                   # [(s_from, Command)], sorted, starts at 0.0
    density_npcs: dict = field(default_factory=lambda: dict(DENSITY_NPCS))

    def validate(self, lane_map: LaneMap):
        if not self.lane_ids:
            raise ValueError(f"route {self.name}: no lanes")
        for lid in self.lane_ids:
            if lid not in lane_map.lanes:
                raise ValueError(f"route {self.name}: unknown lane {lid}")
        for a, b in zip(self.lane_ids, self.lane_ids[1:]):
            if b not in lane_map.lanes[a].successors:
                raise ValueError(f"route {self.name}: {b} does not follow {a}")
        if not (0.0 <= self.start_s < lane_map.lanes[self.lane_ids[0]].length):
            raise ValueError(f"route {self.name}: start_s off the first lane")
        if not (0.0 < self.goal_s <= lane_map.lanes[self.lane_ids[-1]].length):
            raise ValueError(f"route {self.name}: goal_s off the last lane")
        if not self.schedule or self.schedule[0][0] > 0.0:
            raise ValueError(f"route {self.name}: schedule must start at 0")

    def command_at(self, progress: float) -> Command:
        cmd = self.schedule[0][1]
        for s_from, c in self.schedule:
            if progress >= s_from:
                cmd = c
            else:
                break
        return Command(cmd)


class RouteGeometry:
    """Concatenated centerline of a route with progress bookkeeping."""

    def __init__(self, lane_map: LaneMap, route: RouteSpec):
        pts = []
        acc = 0.0
        for lid in route.lane_ids:
            p = lane_map.lanes[lid].line.points
            if pts and np.hypot(*(p[0] - pts[-1])) < 1e-9:
                p = p[1:]
            pts.extend(p)
        self.line = Polyline(pts)
        self.s0 = route.start_s
        self.s1 = self.line.length - (lane_map.lanes[route.lane_ids[-1]].length - route.goal_s)
        self.length = self.s1 - self.s0
        if self.length <= 0:
            raise ValueError(f"route {route.name}: non-positive length")

    def start_pose(self):
        p = self.line.point_at(np.array([self.s0]))[0]
        h = float(self.line.heading_at(np.array([self.s0]))[0])
        return float(p[0]), float(p[1]), h

    def goal_point(self):
        p = self.line.point_at(np.array([self.s1]))[0]
        return float(p[0]), float(p[1])

    def progress_offset(self, x, y):
        s, off, _ = self.line.project(x, y)
        return float(s) - self.s0, float(off)


@dataclass
class EpisodeResult:
    success: bool
    completion: float
    cause: str | None                # None | collision | deviation | timeout
    red_light_violations: int
    duration_s: float
    distance_m: float
    decisions: int
    route: str = ""
    map_name: str = ""
    density: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.success:
            assert self.completion == 1.0 and self.cause is None

    def to_record(self):
        return {
            "route": self.route, "map": self.map_name, "density": self.density,
            "seed": self.seed, "success": self.success,
            "completion": round(self.completion, 4), "cause": self.cause,
            "red_light_violations": self.red_light_violations,
            "duration_s": round(self.duration_s, 2),
            "distance_m": round(self.distance_m, 2),
            "decisions": self.decisions,
        }


def _collision_depth(ego: EgoState, snapshot) -> float:
    worst = 0.0
    for npc in snapshot.npcs:
        d = obb_overlap_depth(ego.x, ego.y, ego.theta, EGO_HALF_LEN, EGO_HALF_WID,
                              npc.x, npc.y, npc.theta, npc.half_len, npc.half_wid)
        worst = max(worst, d)
    return worst


class _RedLightMonitor:
    """Counts route stop-line crossings that happen while the light is red.

    Crossings are detected in route arc-length, which stays continuous
    through junctions where per-lane localization flickers between the
    stem and its connectors. Each stop line is latched once crossed so
    creeping back and forth over the line cannot double-count.
    """

    def __init__(self, lane_map: LaneMap, route: RouteSpec, geom: RouteGeometry):
        self.lane_map = lane_map
        arcs = []
        acc = 0.0
        for lid in route.lane_ids:
            for sl in lane_map.stop_lines_on(lid):
                arcs.append((acc + sl.s - geom.s0, sl.light_id))
            acc += lane_map.lanes[lid].length
        self.arcs = sorted(arcs)
        self._next = 0

    def start(self, progress: float):
        while self._next < len(self.arcs) and self.arcs[self._next][0] <= progress:
            self._next += 1

    def update(self, progress: float, tick: int) -> int:
        hits = 0
        phases = None
        while self._next < len(self.arcs) and self.arcs[self._next][0] <= progress:
            light_id = self.arcs[self._next][1]
            if phases is None:
                phases = light_phases_at(self.lane_map, tick)
            if phases.get(light_id) == LightPhase.RED:
                hits += 1
            self._next += 1
        return hits


def run_episode(lane_map: LaneMap, route: RouteSpec, agent, seed: int,
                density: str = "empty", reward_config: RewardConfig | None = None,
                trace=None) -> EpisodeResult:
    """One closed-loop evaluation episode; deterministic in (route, seed)."""
    route.validate(lane_map)
    rcfg = reward_config or RewardConfig()
    geom = RouteGeometry(lane_map, route)
    rng = np.random.default_rng(seed)
    x0, y0, h0 = geom.start_pose()
    ego = EgoState(x0, y0, h0, 0.0)
    n_npcs = route.density_npcs[density]
    npcs = spawn_npcs(lane_map, n_npcs, rng, ego=ego) if n_npcs else []
    tick0 = int(rng.integers(0, 1200))
    snapshot = initial_snapshot(lane_map, npcs, tick=tick0)
    agent.begin_episode(seed)
    monitor = _RedLightMonitor(lane_map, route, geom)
    monitor.start(geom.progress_offset(ego.x, ego.y)[0])

    budget_s = geom.length / CRUISE_TIMEOUT_MPS
    hard_cap_s = budget_s * 5.0 + 60.0
    clock_s = 0.0
    sim_s = 0.0
    best_progress = 0.0
    violations = 0
    decisions = 0
    cause = None
    success = False

    while True:
        progress, off = geom.progress_offset(ego.x, ego.y)
        best_progress = max(best_progress, progress)
        command = route.command_at(max(progress, 0.0))
        action = agent.act(snapshot, ego, command)
        stopped_in_zone = (
            ego.v < STOPPED_V
            and zero_speed_region(lane_map, snapshot, ego, rcfg, command) != ZoneKind.NONE)
        if trace is not None:
            trace.append({"tick": snapshot.tick, "x": ego.x, "y": ego.y,
                          "theta": ego.theta, "v": ego.v,
                          "command": COMMAND_NAMES[command],
                          "steer": action.steer, "throttle": action.throttle,
                          "brake": action.brake, "progress": progress})
        for _ in range(CONTROL_PERIOD):
            ego = step_ego_ground_truth(ego, action)
            snapshot = step_world(lane_map, snapshot, WorldMode.REACTIVE, ego=ego)
            violations += monitor.update(geom.progress_offset(ego.x, ego.y)[0],
                                         snapshot.tick)
            if _collision_depth(ego, snapshot) > COLLISION_DEPTH:
                cause = "collision"
                break
        decisions += 1
        sim_s += DECISION_DT
        if not stopped_in_zone:
            clock_s += DECISION_DT
        if cause is not None:
            break
        progress, off = geom.progress_offset(ego.x, ego.y)
        best_progress = max(best_progress, progress)
        if abs(off) > DEVIATION_MARGIN:
            cause = "deviation"
            break
        gx, gy = geom.goal_point()
        if progress >= geom.length - GOAL_RADIUS and np.hypot(ego.x - gx, ego.y - gy) <= GOAL_RADIUS + 2.0:
            success = True
            break
        if clock_s > budget_s or sim_s > hard_cap_s:
            cause = "timeout"
            break

    completion = 1.0 if success else float(np.clip(best_progress / geom.length, 0.0, 1.0))
    return EpisodeResult(success=success, completion=completion, cause=cause,
                         red_light_violations=violations, duration_s=sim_s,
                         distance_m=best_progress, decisions=decisions,
                         route=route.name, map_name=route.map_name,
                         density=density, seed=seed)


# -- suites -------------------------------------------------------------------

@dataclass
class DensityAggregate:
    episodes: int
    success_rate: float              # percent
    mean_completion: float           # percent
    violations_per_hour: float
    hours: float


@dataclass
class SuiteReport:
    agent_label: str
    per_density: dict                # density -> DensityAggregate
    results: list                    # EpisodeResult

    def table_text(self) -> str:
        lines = [f"agent: {self.agent_label}",
                 f"{'density':<10}{'episodes':>9}{'success%':>10}{'completion%':>13}{'red/h':>8}"]
        for dens, agg in self.per_density.items():
            lines.append(f"{dens:<10}{agg.episodes:>9}{agg.success_rate:>10.1f}"
                         f"{agg.mean_completion:>13.1f}{agg.violations_per_hour:>8.2f}")
        return "\n".join(lines) + "\n"


def aggregate(results) -> DensityAggregate:
    n = len(results)
    hours = sum(r.duration_s for r in results) / 3600.0
    viols = sum(r.red_light_violations for r in results)
    return DensityAggregate(
        episodes=n,
        success_rate=100.0 * sum(r.success for r in results) / n,
        mean_completion=100.0 * sum(r.completion for r in results) / n,
        violations_per_hour=(viols / hours) if hours > 0 else 0.0,
        hours=hours)


_WORKER_STATE: dict = {}


def _init_episode_worker(agent_factory, reward_config):
    _WORKER_STATE["factory"] = agent_factory
    _WORKER_STATE["reward_config"] = reward_config
    _WORKER_STATE["agents"] = {}


def _episode_job(args):
    route, seed, density = args
    lane_map = load_map(route.map_name)
    agents = _WORKER_STATE["agents"]
    if route.map_name not in agents:
        agents[route.map_name] = _WORKER_STATE["factory"](lane_map)
    return run_episode(lane_map, route, agents[route.map_name], seed,
                       density=density,
                       reward_config=_WORKER_STATE["reward_config"])


def run_suite(routes, agent_factory, densities, seeds, agent_label="agent",
              out_dir=None, reward_config: RewardConfig | None = None,
              progress=None, workers: int = 1) -> SuiteReport:
    """Evaluate over routes x seeds per density condition.

    `agent_factory(lane_map)` builds (or returns a cached) agent for a map;
    agents are reused across episodes on the same map. With workers > 1,
    episodes fan out over processes (the factory must then be picklable)
    and aggregation stays a single-threaded reduction over ordered results.
    """
    results = []
    per_density = {}
    if workers > 1:
        import concurrent.futures as cf
        jobs = [(route, seed, density)
                for density in densities for route in routes for seed in seeds]
        with cf.ProcessPoolExecutor(
                max_workers=workers, initializer=_init_episode_worker,
                initargs=(agent_factory, reward_config)) as pool:
            ordered = list(pool.map(_episode_job, jobs))
        per_job = iter(ordered)
        for density in densities:
            dens_results = []
            for _route in routes:
                for _seed in seeds:
                    r = next(per_job)
                    dens_results.append(r)
                    if progress is not None:
                        progress(r)
            results.extend(dens_results)
            per_density[density] = aggregate(dens_results)
        report = SuiteReport(agent_label=agent_label,
                             per_density=per_density, results=results)
        _write_report(report, per_density, results, out_dir)
        return report
    agents = {}
    for density in densities:
        dens_results = []
        for route in routes:
            lane_map = load_map(route.map_name)
            if route.map_name not in agents:
                agents[route.map_name] = agent_factory(lane_map)
            for seed in seeds:
                r = run_episode(lane_map, route, agents[route.map_name], seed,
                                density=density, reward_config=reward_config)
                dens_results.append(r)
                if progress is not None:
                    progress(r)
        results.extend(dens_results)
        per_density[density] = aggregate(dens_results)
    report = SuiteReport(agent_label=agent_label, per_density=per_density, results=results)
    _write_report(report, per_density, results, out_dir)
    return report


def _write_report(report, per_density, results, out_dir):
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "table.txt"), "w") as f:
        f.write(report.table_text())
    with open(os.path.join(out_dir, "episodes.jsonl"), "w") as f:
        for r in results:
            f.write(json.dumps(r.to_record()) + "\n")
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump({d: vars(a) for d, a in per_density.items()}, f, indent=2)


# -- route construction -------------------------------------------------------

def _walk_straight(lane_map, start, max_len):
    """Greedy min-turn walk; returns (lane ids, junction arc list) or None."""
    ids = [start]
    acc = lane_map.lanes[start].length
    junctions = []
    while acc < max_len:
        cur = ids[-1]
        succs = lane_map.lanes[cur].successors
        if not succs:
            break
        angles = [lane_map.turn_angle(cur, s) for s in succs]
        i = int(np.argmin(np.abs(angles)))
        if abs(angles[i]) > _STRAIGHT_MAX:
            break
        if succs[i] in ids:
            break
        if len(succs) >= 2:
            junctions.append(acc)
        ids.append(succs[i])
        acc += lane_map.lanes[succs[i]].length
    return ids, junctions, acc


def _protected(lane_map, stem):
    return any(sl.s > lane_map.lanes[stem].length - 12.0
               for sl in lane_map.stop_lines_on(stem))


def builtin_routes(map_name: str, kind: str, count: int = 10, seed: int = 0,
                   target_len=(70.0, 150.0)) -> list:
    """Deterministic route suites walked out of the lane graph.

    kind "straight": min-turn paths with GO_STRAIGHT scheduled at real
    junctions. kind "turn": one committed junction turn per route; left
    turns only from stems that hold a stop line (signal-protected).
    """
    lane_map = load_map(map_name)
    rng = np.random.default_rng(seed)
    lo, hi = target_len
    routes = []
    seen = set()
    if kind == "straight":
        starts = sorted(lane_map.lanes)
        for start in starts:
            if lane_map.lanes[start].length < 12.0:
                continue
            ids, junctions, acc = _walk_straight(lane_map, start, hi + 30.0)
            start_s = 5.0
            length = acc - start_s
            if length < lo:
                continue
            goal_s = lane_map.lanes[ids[-1]].length
            total = acc - start_s
            if total > hi:
                trim = total - hi
                if goal_s - trim < 3.0:
                    continue
                goal_s -= trim
            key = tuple(ids)
            if key in seen:
                continue
            seen.add(key)
            sched = [(0.0, Command.FOLLOW_LANE)]
            for j in junctions:
                a = j - start_s
                sched.append((max(a - 25.0, 0.0), Command.GO_STRAIGHT))
                sched.append((a + 1.0, Command.FOLLOW_LANE))
            sched.sort(key=lambda e: e[0])
            routes.append(RouteSpec(name=f"{map_name}-straight-{len(routes):02d}",
                                    map_name=map_name, lane_ids=ids, start_s=start_s,
                                    goal_s=goal_s, schedule=sched))
    elif kind == "turn":
        stems = []
        spare = []
        for lid in sorted(lane_map.lanes):
            succs = lane_map.lanes[lid].successors
            if len(succs) < 2:
                continue
            for s in succs:
                ang = lane_map.turn_angle(lid, s)
                if ang >= _TURN_MIN:
                    # lefts from a signalled stem first; unprotected ones
                    # only as filler so every suite face the same geometry
                    (stems if _protected(lane_map, lid) else spare).append(
                        (lid, s, Command.TURN_LEFT))
                elif ang <= -_TURN_MIN:
                    stems.append((lid, s, Command.TURN_RIGHT))
        for stem, turn_lane, cmd in stems + spare:
            ids = [stem, turn_lane]
            # approach: extend backwards along min-turn predecessors
            while sum(lane_map.lanes[i].length for i in ids[:-1]) < 40.0:
                preds = lane_map.predecessors(ids[0])
                preds = [p for p in preds if p not in ids]
                if not preds:
                    break
                angles = [abs(lane_map.turn_angle(p, ids[0])) for p in preds]
                ids.insert(0, preds[int(np.argmin(angles))])
            # exit: continue forward a bit
            acc = sum(lane_map.lanes[i].length for i in ids)
            while acc < lo + 40.0:
                cur = ids[-1]
                succs = [s for s in lane_map.lanes[cur].successors if s not in ids]
                if not succs:
                    break
                angles = [lane_map.turn_angle(cur, s) for s in succs]
                i = int(np.argmin(np.abs(angles)))
                if abs(angles[i]) > _STRAIGHT_MAX:
                    break
                ids.append(succs[i])
                acc += lane_map.lanes[succs[i]].length
            if ids[-1] == turn_lane:
                continue             # no exit leg; goal would sit in the turn
            key = tuple(ids)
            if key in seen:
                continue
            seen.add(key)
            start_s = 5.0
            last_len = lane_map.lanes[ids[-1]].length
            acc = sum(lane_map.lanes[i].length for i in ids)
            turn_end = sum(lane_map.lanes[i].length for i in ids[:ids.index(turn_lane) + 1])
            # trim the exit to the target length, keeping 25 m past the turn
            goal_arc = min(acc, start_s + hi)
            goal_arc = max(goal_arc, turn_end + 25.0, acc - last_len + 3.0)
            goal_arc = min(goal_arc, acc)
            goal_s = min(goal_arc - (acc - last_len), last_len)
            # keep the turn command live through the whole connector: lane
            # matching can lag onto the stem early in the arc, and a
            # follow-lane chain from the stem would pull straight
            j_arc = sum(lane_map.lanes[i].length for i in ids[:ids.index(turn_lane)]) - start_s
            sched = [(0.0, Command.FOLLOW_LANE),
                     (max(j_arc - 25.0, 0.0), cmd),
                     (turn_end - start_s + 2.0, Command.FOLLOW_LANE)]
            routes.append(RouteSpec(name=f"{map_name}-turn-{len(routes):02d}",
                                    map_name=map_name, lane_ids=ids, start_s=start_s,
                                    goal_s=goal_s, schedule=sched))
    else:
        raise ValueError(f"unknown route kind {kind!r}")
    for r in routes:
        r.validate(lane_map)
    if len(routes) > count:
        idx = rng.permutation(len(routes))[:count]
        routes = [routes[i] for i in sorted(idx)]
    return routes


# -- route file ----------------------------------------------------------------

ROUTES_MAGIC = "ROUTES 1"


def write_routes(routes, path):
    with open(path, "w") as f:
        f.write(ROUTES_MAGIC + "\n")
        for r in routes:
            f.write(f"route {r.name}\n")
            f.write(f"map {r.map_name}\n")
            f.write(f"lanes {','.join(r.lane_ids)}\n")
            f.write(f"span {r.start_s!r} {r.goal_s!r}\n")
            for s, c in r.schedule:
                f.write(f"command {s!r} {COMMAND_NAMES[Command(c)]}\n")
            f.write(f"density {' '.join(f'{k}={v}' for k, v in r.density_npcs.items())}\n")
            f.write("end\n")


def read_routes(path) -> list:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != ROUTES_MAGIC:
        raise ValueError(f"{path}: not a routes file")
    routes = []
    cur = None
    for ln in lines[1:]:
        if not ln.strip():
            continue
        tok = ln.split()
        if tok[0] == "route":
            cur = {"name": tok[1], "schedule": [], "density": dict(DENSITY_NPCS)}
        elif cur is None:
            raise ValueError(f"{path}: {ln!r} outside a route block")
        elif tok[0] == "map":
            cur["map"] = tok[1]
        elif tok[0] == "lanes":
            cur["lanes"] = tok[1].split(",")
        elif tok[0] == "span":
            cur["span"] = (float(tok[1]), float(tok[2]))
        elif tok[0] == "command":
            cur["schedule"].append((float(tok[1]), COMMAND_BY_NAME[tok[2]]))
        elif tok[0] == "density":
            cur["density"] = {k: int(v) for k, v in (kv.split("=") for kv in tok[1:])}
        elif tok[0] == "end":
            routes.append(RouteSpec(name=cur["name"], map_name=cur["map"],
                                    lane_ids=cur["lanes"], start_s=cur["span"][0],
                                    goal_s=cur["span"][1], schedule=cur["schedule"],
                                    density_npcs=cur["density"]))
            cur = None
        else:
            raise ValueError(f"{path}: unknown directive {tok[0]!r}")
    if cur is not None:
        raise ValueError(f"{path}: unterminated route block")
    return routes
