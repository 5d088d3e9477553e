"""Recording policies and the log collection loop.

Recording runs the world in scripted mode: traffic follows its schedule and
ignores the ego, which is exactly the assumption the later value backups
make. Two recording policies are provided: a pure-pursuit autopilot that
drives the lane graph with random route commands (stopping for lights and
leaders), and a uniform random explorer that covers the action space for
model fitting. Executed steering can be perturbed with Ornstein-Uhlenbeck
noise so the autopilot visits recovery states it would otherwise avoid.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from microdrive.lane_map import Command, LaneMap, LightPhase, N_COMMANDS
from microdrive.logs import LogWriter, TrajectoryLog, read_log, write_index
from microdrive.observation import observe
from microdrive.world import (
    Action,
    CONTROL_PERIOD,
    EGO_HALF_LEN,
    EgoState,
    SpawnConflict,
    TICK_RATE_HZ,
    WorldMode,
    initial_snapshot,
    spawn_ego,
    spawn_npcs,
    step_ego_ground_truth,
    step_world,
)


@dataclass
class OUNoiseConfig:
    theta: float = 0.15
    sigma: float = 0.3
    dt: float = 1.0          # one unit per control decision


class OUNoise:
    """Mean-reverting additive noise, one sample per control decision."""

    def __init__(self, cfg: OUNoiseConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.value = 0.0

    def sample(self) -> float:
        c = self.cfg
        self.value += c.theta * (0.0 - self.value) * c.dt
        self.value += c.sigma * np.sqrt(c.dt) * self.rng.standard_normal()
        return self.value


# -- autopilot ---------------------------------------------------------------

_CRUISE_V = 6.0
_LAT_ACCEL = 2.0
_STOP_DECEL = 2.5
_STEER_GAIN = 2.5
_THR_FF = 0.12
_THR_P = 0.45
_THR_BIAS = 0.04
_HEADWAY_S = 2.0
_MIN_GAP = 4.0


class Autopilot:
    """Pure-pursuit lane follower issuing random route commands.

    The active command persists until its junction choice is consumed (the
    chain crosses a multi-successor boundary behind the ego), then a fresh
    feasible command is drawn. Lane changes expire by distance instead.
    """

    def __init__(self, lane_map: LaneMap, rng: np.random.Generator):
        self.lane_map = lane_map
        self.rng = rng
        self.command = Command.FOLLOW_LANE
        self._remaining = -1.0      # meters of travel before the command re-rolls

    def _feasible_commands(self, x, y, theta):
        out = []
        for c in range(N_COMMANDS):
            chain = self.lane_map.build_chain(x, y, theta, Command(c))
            if not chain.fallback:
                out.append((Command(c), chain))
        return out

    def _resample(self, x, y, theta):
        options = self._feasible_commands(x, y, theta)
        idx = int(self.rng.integers(len(options)))
        self.command, chain = options[idx]
        self._remaining = self._commit_distance(chain) + 3.0
        return chain

    def _commit_distance(self, chain):
        """Travel distance after which the command's choice is behind us."""
        if self.command in (Command.CHANGE_LEFT, Command.CHANGE_RIGHT):
            return 15.0
        lanes = chain.vertex_lanes
        cum = chain.line.cum_s
        for i in range(1, len(lanes)):
            if lanes[i] != lanes[i - 1] and cum[i] > chain.s_query:
                if len(self.lane_map.lanes[lanes[i - 1]].successors) >= 2:
                    return cum[i] - chain.s_query
        return 20.0

    def act(self, snapshot, ego: EgoState):
        self._remaining -= ego.v * (CONTROL_PERIOD / TICK_RATE_HZ)
        chain = self.lane_map.build_chain(ego.x, ego.y, ego.theta, self.command)
        if chain.fallback or self._remaining <= 0.0:
            chain = self._resample(ego.x, ego.y, ego.theta)
        s0 = chain.s_query

        # pure pursuit on the chain centerline
        lookahead = float(np.clip(1.5 + 0.8 * ego.v, 2.0, 8.0))
        target = chain.line.point_at(s0 + lookahead)
        dx = float(target[0]) - ego.x
        dy = float(target[1]) - ego.y
        alpha = np.arctan2(dy, dx) - ego.theta
        alpha = (alpha + np.pi) % (2 * np.pi) - np.pi
        steer = float(np.clip(_STEER_GAIN * alpha, -1.0, 1.0))

        v_target = _CRUISE_V
        # curvature ahead
        for d in (2.0, 4.0, 6.0, 8.0):
            h0 = chain.line.heading_at(min(s0 + d - 2.0, chain.line.length))
            h1 = chain.line.heading_at(min(s0 + d, chain.line.length))
            dh = abs((h1 - h0 + np.pi) % (2 * np.pi) - np.pi)
            kappa = dh / 2.0
            if kappa > 1e-4:
                v_target = min(v_target, float(np.sqrt(_LAT_ACCEL / kappa)))
        v_target = max(v_target, 2.2)

        hard_stop = False
        # signals on the chain
        for s_ev, light_id in chain.stop_events:
            if s_ev <= s0:
                continue
            phase = snapshot.light_phases.get(light_id, LightPhase.GREEN)
            if phase == LightPhase.GREEN:
                continue
            d = s_ev - s0 - EGO_HALF_LEN - 1.0
            if phase == LightPhase.YELLOW and ego.v ** 2 / (2 * _STOP_DECEL) > max(d, 0.0):
                continue  # cannot stop in time, carry through
            if d <= 0.3:
                v_target = 0.0
                hard_stop = True
            else:
                v_target = min(v_target, float(np.sqrt(2 * _STOP_DECEL * d)))
            break

        # leader on the corridor
        for npc in snapshot.npcs:
            if (npc.x - ego.x) ** 2 + (npc.y - ego.y) ** 2 > 30.0 ** 2:
                continue
            s_n, off, _ = chain.line.project(npc.x, npc.y)
            if abs(float(off)) > 1.2:
                continue
            gap = float(s_n) - s0 - npc.half_len - EGO_HALF_LEN
            if gap < 0.0 or float(s_n) <= s0:
                continue
            v_target = min(v_target, max(0.0, (gap - _MIN_GAP) / _HEADWAY_S))
            if gap < _MIN_GAP * 0.75:
                hard_stop = True

        err = v_target - ego.v
        if hard_stop and ego.v > 0.0:
            return Action(0.0, 0.0, True)
        if err < -1.2:
            return Action(0.0, 0.0, True)
        throttle = float(np.clip(_THR_FF * v_target + _THR_P * err + _THR_BIAS, 0.0, 1.0))
        return Action(steer, throttle, False)


class RandomExplorer:
    """Uniform action noise for system identification coverage."""

    BRAKE_P = 0.1

    def __init__(self, lane_map: LaneMap, rng: np.random.Generator):
        self.lane_map = lane_map
        self.rng = rng
        self.command = Command.FOLLOW_LANE

    def act(self, snapshot, ego: EgoState):
        if self.rng.random() < self.BRAKE_P:
            return Action(0.0, 0.0, True)
        return Action(
            float(self.rng.uniform(-1.0, 1.0)),
            float(self.rng.uniform(0.0, 1.0)),
            False,
        )


# -- collection loop --------------------------------------------------------


@dataclass
class CollectConfig:
    episodes: int = 10
    episode_s: float = 60.0
    n_npcs: int = 6
    policy: str = "auto"            # "auto" or "random"
    noise: OUNoiseConfig | None = None
    seed: int = 0
    offroad_limit: float = 6.0
    render_observations: bool = True


def _make_policy(name, lane_map, rng):
    if name == "auto":
        return Autopilot(lane_map, rng)
    if name == "random":
        return RandomExplorer(lane_map, rng)
    raise ValueError(f"unknown recording policy {name!r}")


def collect_episode(lane_map: LaneMap, cfg: CollectConfig, seed, writer: LogWriter | None = None):
    """Record one scripted-traffic episode. Returns in-memory record lists."""
    rng = np.random.default_rng(seed)
    ego = spawn_ego(lane_map, rng)
    npcs = spawn_npcs(lane_map, cfg.n_npcs, rng, ego=ego)
    snapshot = initial_snapshot(lane_map, npcs, tick=int(rng.integers(0, 36 * TICK_RATE_HZ)))
    policy = _make_policy(cfg.policy, lane_map, rng)
    noise = OUNoise(cfg.noise, rng) if cfg.noise is not None else None

    n_decisions = int(round(cfg.episode_s * TICK_RATE_HZ / CONTROL_PERIOD))
    records = []
    for _ in range(n_decisions):
        action = policy.act(snapshot, ego)
        if noise is not None and not action.brake:
            action = Action(float(np.clip(action.steer + noise.sample(), -1.0, 1.0)),
                            action.throttle, False)
        elif noise is not None:
            noise.sample()  # keep the noise path independent of braking
        obs = observe(lane_map, snapshot, ego) if cfg.render_observations else None
        records.append((snapshot, ego, action, int(policy.command), obs))
        if writer is not None:
            writer.append(snapshot, ego, action, int(policy.command), obs)
        for _ in range(CONTROL_PERIOD):
            ego = step_ego_ground_truth(ego, action)
            snapshot = step_world(lane_map, snapshot, WorldMode.SCRIPTED)
        if not lane_map.lanes_near(ego.x, ego.y, cfg.offroad_limit):
            break
    return records


def collect_logs(lane_map: LaneMap, cfg: CollectConfig, out_dir=None):
    """Record episodes; optionally persist them as log files plus index.

    Returns the list of TrajectoryLog objects (read back from disk when
    out_dir is given, so the returned data has file fidelity).
    """
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.episodes * 4)
    done = 0
    attempt = 0
    out = []
    index_entries = []
    while done < cfg.episodes:
        if attempt >= len(seeds):
            raise SpawnConflict(f"could not place traffic for {cfg.episodes} episodes")
        seed = seeds[attempt]
        attempt += 1
        writer = None
        path = None
        if out_dir is not None:
            path = os.path.join(out_dir, f"traj_{done:04d}.worlog")
            writer = LogWriter(path, lane_map, TICK_RATE_HZ, CONTROL_PERIOD)
        try:
            records = collect_episode(lane_map, cfg, seed, writer)
        except SpawnConflict:
            if writer is not None:
                writer.close()
                os.remove(path)
            continue
        if writer is not None:
            writer.close()
            index_entries.append((os.path.basename(path), len(records)))
            out.append(read_log(path))
        else:
            out.append(_records_to_log(lane_map, records))
        done += 1
    if out_dir is not None:
        write_index(out_dir, index_entries)
    return out


def _records_to_log(lane_map, records) -> TrajectoryLog:
    snaps = [r[0] for r in records]
    return TrajectoryLog(
        map_name=lane_map.name,
        tick_rate_hz=TICK_RATE_HZ,
        control_period=CONTROL_PERIOD,
        ticks=np.array([s.tick for s in snaps], dtype=np.uint64),
        ego=np.array([[r[1].x, r[1].y, r[1].theta, r[1].v] for r in records]),
        actions=np.array([[r[2].steer, r[2].throttle, float(r[2].brake)] for r in records]),
        commands=np.array([r[3] for r in records], dtype=np.uint8),
        snapshots=snaps,
        observations=[r[4] for r in records],
    )
