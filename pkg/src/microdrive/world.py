"""Deterministic 2D top-down driving world.

The world ticks at 20 Hz; control decisions land every 5th tick (4 Hz).
Traffic comes in two stepping modes: SCRIPTED cars follow their lanes on
fixed schedules and never react to the ego vehicle (so a recorded episode
replays verbatim around any imagined ego motion), while REACTIVE cars add a
time-headway braking rule against the ego. Traffic lights are pure functions
of the tick, identical in both modes.

The ego vehicle's true motion model lives here as module-private constants;
the rest of the package only ever sees logged transitions, so fitting a
parametric model to them is a real estimation problem.
"""
from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from microdrive.geometry import wrap_angle
from microdrive.lane_map import LaneMap, LightPhase

TICK_RATE_HZ = 20.0
TICK_DT = 1.0 / TICK_RATE_HZ
CONTROL_PERIOD = 5            # ticks between control decisions
DECISION_DT = TICK_DT * CONTROL_PERIOD

EGO_HALF_LEN = 2.25
EGO_HALF_WID = 0.95
NPC_HALF_LEN = 2.25
NPC_HALF_WID = 0.95

NPC_ACCEL = 2.0               # m/s^2 comfortable acceleration
NPC_DECEL = 6.0               # m/s^2 hard braking limit
NPC_COMFORT_DECEL = 2.5       # m/s^2 used for anticipatory slowdowns
NPC_HEADWAY_S = 2.0           # time-headway rule threshold
NPC_MIN_GAP = 4.0             # standstill bumper gap, meters
NPC_LAT_ACCEL = 2.0           # lateral accel cap through curves


class WorldMode(enum.Enum):
    SCRIPTED = "scripted"     # traffic ignores the ego entirely
    REACTIVE = "reactive"     # traffic also yields to the ego


@dataclass
class EgoState:
    x: float
    y: float
    theta: float
    v: float

    def __post_init__(self):
        self.theta = wrap_angle(self.theta)
        if self.v < 0.0:
            if self.v < -1e-6:
                raise ValueError(f"ego speed must be non-negative, got {self.v}")
            self.v = 0.0

    def as_array(self):
        return np.array([self.x, self.y, self.theta, self.v], dtype=np.float64)


@dataclass
class Action:
    steer: float = 0.0
    throttle: float = 0.0
    brake: bool = False

    def __post_init__(self):
        if self.brake:
            # No steering or throttle while braking.
            self.steer = 0.0
            self.throttle = 0.0
        self.steer = float(min(1.0, max(-1.0, self.steer)))
        self.throttle = float(min(1.0, max(0.0, self.throttle)))
        self.brake = bool(self.brake)


@dataclass
class NPCState:
    npc_id: int
    x: float
    y: float
    theta: float
    v: float
    half_len: float = NPC_HALF_LEN
    half_wid: float = NPC_HALF_WID
    lane_id: str = ""
    s: float = 0.0
    cruise_v: float = 3.8
    trip_seed: int = 0


@dataclass
class WorldSnapshot:
    tick: int
    map_name: str
    npcs: list = field(default_factory=list)
    light_phases: dict = field(default_factory=dict)

    @property
    def time_s(self) -> float:
        return self.tick * TICK_DT


def light_phases_at(lane_map: LaneMap, tick: int) -> dict:
    t = tick * TICK_DT
    return {lid: light.phase_at(t) for lid, light in lane_map.lights.items()}


def initial_snapshot(lane_map: LaneMap, npcs=None, tick: int = 0) -> WorldSnapshot:
    return WorldSnapshot(
        tick=tick,
        map_name=lane_map.name,
        npcs=list(npcs or []),
        light_phases=light_phases_at(lane_map, tick),
    )


# -- hidden ground-truth ego dynamics --------------------------------------
# A front/rear-axle bicycle with a mildly nonlinear steering linkage and
# speed-dependent drag, integrated per tick. Nothing outside this module
# reads these constants.

_TRUE_FRONT = 1.35
_TRUE_REAR = 1.45
_TRUE_THROTTLE_GAIN = 3.2
_TRUE_IDLE_PUSH = 0.12
_TRUE_DRAG = 0.42
_TRUE_BRAKE = 4.5


def _true_wheel_angle(steer: float) -> float:
    return 0.5 * steer - 0.1 * steer ** 3


def step_ego_ground_truth(ego: EgoState, action: Action, dt: float = TICK_DT) -> EgoState:
    """Advance the ego one tick under the true (hidden) dynamics."""
    if action.brake:
        phi = 0.0
        accel = -_TRUE_BRAKE
    else:
        phi = _true_wheel_angle(action.steer)
        accel = (
            _TRUE_THROTTLE_GAIN * action.throttle
            + _TRUE_IDLE_PUSH
            - _TRUE_DRAG * ego.v
        )
    beta = math.atan(_TRUE_REAR / (_TRUE_FRONT + _TRUE_REAR) * math.tan(phi))
    x = ego.x + dt * ego.v * math.cos(ego.theta + beta)
    y = ego.y + dt * ego.v * math.sin(ego.theta + beta)
    theta = ego.theta + dt * (ego.v / _TRUE_REAR) * math.sin(beta)
    v = max(0.0, ego.v + dt * accel)
    return EgoState(x, y, theta, v)


# -- scripted traffic -------------------------------------------------------


def _stable_hash(*parts) -> int:
    h = 0
    for p in parts:
        h = zlib.crc32(str(p).encode(), h)
    return h


def _lane_curve_caps(lane_map: LaneMap) -> dict:
    caps = getattr(lane_map, "_curve_caps", None)
    if caps is not None:
        return caps
    caps = {}
    for lid, lane in lane_map.lanes.items():
        pts = lane.line.points
        if len(pts) < 3:
            caps[lid] = float("inf")
            continue
        seg = pts[1:] - pts[:-1]
        heads = np.arctan2(seg[:, 1], seg[:, 0])
        dth = np.abs(wrap_angle(np.diff(heads)))
        ds = 0.5 * (lane.line.seg_len[:-1] + lane.line.seg_len[1:])
        kappa = float(np.max(dth / np.maximum(ds, 1e-9)))
        caps[lid] = float("inf") if kappa < 1e-6 else math.sqrt(NPC_LAT_ACCEL / kappa)
    lane_map._curve_caps = caps
    return caps


def _npc_next_lane(lane_map: LaneMap, npc: NPCState, lane_id: str) -> str | None:
    succs = lane_map.npc_successors(lane_id)
    if not succs:
        return None
    pick = _stable_hash(npc.npc_id, lane_id, npc.trip_seed) % len(succs)
    return succs[pick]


def _npc_forward_lanes(lane_map: LaneMap, npc: NPCState, horizon: float):
    """(lane_id, s_at_lane_start) pairs the car will traverse within horizon."""
    out = [(npc.lane_id, 0.0)]
    dist = lane_map.lanes[npc.lane_id].length - npc.s
    lane_id = npc.lane_id
    while dist < horizon:
        nxt = _npc_next_lane(lane_map, npc, lane_id)
        if nxt is None or any(lid == nxt for lid, _ in out):
            break
        out.append((nxt, dist))
        dist += lane_map.lanes[nxt].length
        lane_id = nxt
    return out


def _gap_to_leader(lane_map, npc, others, ego, horizon=35.0):
    """Smallest bumper-to-bumper gap to traffic ahead on the car's path."""
    chain = _npc_forward_lanes(lane_map, npc, horizon)
    gap = None
    for lane_id, start in chain:
        lane = lane_map.lanes[lane_id]
        # `start` is the along-path distance from the car to this lane's
        # start (0 on its own lane, where positions are relative to npc.s).
        for other in others:
            if other.npc_id == npc.npc_id or other.lane_id != lane_id:
                continue
            ahead = other.s - npc.s if lane_id == npc.lane_id else start + other.s
            if ahead <= 1e-9:
                continue
            g = ahead - npc.half_len - other.half_len
            if gap is None or g < gap:
                gap = g
        if ego is not None:
            s_e, off_e, _ = lane.line.project(ego.x, ego.y)
            s_e, off_e = float(s_e), float(off_e)
            if abs(off_e) <= 0.5 * lane.width + 0.6 and 0.0 < s_e < lane.length:
                ahead = s_e - npc.s if lane_id == npc.lane_id else start + s_e
                if ahead > 1e-9:
                    g = ahead - npc.half_len - EGO_HALF_LEN
                    if gap is None or g < gap:
                        gap = g
    return gap


def _npc_target_speed(lane_map, npc, phases, others, ego):
    caps = _lane_curve_caps(lane_map)
    lane = lane_map.lanes[npc.lane_id]
    target = min(npc.cruise_v, caps[npc.lane_id])

    # Slow for the next lane's curvature as its start approaches.
    remain = lane.length - npc.s
    if remain < 14.0:
        nxt = _npc_next_lane(lane_map, npc, npc.lane_id)
        if nxt is not None:
            cap = caps[nxt]
            if cap < target:
                allowed = math.sqrt(cap * cap + 2.0 * NPC_COMFORT_DECEL * max(0.0, remain))
                target = min(target, allowed)

    # Red or yellow signal ahead: stop at the line if a comfortable-to-firm
    # deceleration can still make it; otherwise continue through.
    for lane_id, start in _npc_forward_lanes(lane_map, npc, 30.0):
        for sl in lane_map.stop_lines_on(lane_id):
            dist = sl.s - npc.s if lane_id == npc.lane_id else start + sl.s
            if dist <= 0.05:
                continue
            if phases.get(sl.light_id, LightPhase.GREEN) == LightPhase.GREEN:
                continue
            room = max(0.0, dist - 0.3)
            if npc.v * npc.v > 2.0 * (NPC_DECEL - 0.5) * room:
                continue  # cannot stop before the line; clear the box instead
            allowed = math.sqrt(2.0 * NPC_COMFORT_DECEL * room)
            target = min(target, allowed)

    gap = _gap_to_leader(lane_map, npc, others, ego)
    if gap is not None:
        allowed = max(0.0, (gap - NPC_MIN_GAP) / NPC_HEADWAY_S)
        target = min(target, allowed)
    return target


def _step_npc(lane_map, npc, phases, others, ego, dt):
    target = _npc_target_speed(lane_map, npc, phases, others, ego)
    dv = target - npc.v
    dv = max(-NPC_DECEL * dt, min(NPC_ACCEL * dt, dv))
    v = max(0.0, npc.v + dv)
    s = npc.s + v * dt
    lane_id = npc.lane_id
    lane = lane_map.lanes[lane_id]
    while s > lane.length:
        nxt = _npc_next_lane(lane_map, npc, lane_id)
        if nxt is None:
            s = lane.length
            v = 0.0
            break
        s -= lane.length
        lane_id = nxt
        lane = lane_map.lanes[lane_id]
    p = lane.line.point_at(s)
    theta = float(lane.line.heading_at(s))
    return replace(npc, x=float(p[0]), y=float(p[1]), theta=theta, v=v, lane_id=lane_id, s=float(s))


def step_world(lane_map: LaneMap, snapshot: WorldSnapshot, mode: WorldMode, ego: EgoState | None = None) -> WorldSnapshot:
    """Advance the world one tick.

    SCRIPTED mode never looks at the ego, so identical snapshots produce
    identical successors regardless of what the ego does. REACTIVE mode adds
    the ego as an obstacle for the headway rule.
    """
    if lane_map.name != snapshot.map_name:
        raise ValueError(f"snapshot is for map {snapshot.map_name!r}, got {lane_map.name!r}")
    tick = snapshot.tick + 1
    phases = snapshot.light_phases
    ego_obstacle = ego if mode == WorldMode.REACTIVE else None
    npcs = [
        _step_npc(lane_map, npc, phases, snapshot.npcs, ego_obstacle, TICK_DT)
        for npc in snapshot.npcs
    ]
    return WorldSnapshot(
        tick=tick,
        map_name=snapshot.map_name,
        npcs=npcs,
        light_phases=light_phases_at(lane_map, tick),
    )


# -- spawning ---------------------------------------------------------------


class SpawnConflict(RuntimeError):
    """Not enough clear spawn points for the requested traffic density."""


def npc_from_spawn(lane_map: LaneMap, npc_id: int, lane_id: str, s: float, cruise_v: float, trip_seed: int) -> NPCState:
    lane = lane_map.lanes[lane_id]
    p = lane.line.point_at(s)
    theta = float(lane.line.heading_at(s))
    return NPCState(
        npc_id=npc_id,
        x=float(p[0]),
        y=float(p[1]),
        theta=theta,
        v=0.0,
        lane_id=lane_id,
        s=float(s),
        cruise_v=cruise_v,
        trip_seed=trip_seed,
    )


def spawn_npcs(lane_map: LaneMap, count: int, rng: np.random.Generator, ego: EgoState | None = None, clearance: float = 12.0):
    """Place `count` cars on shuffled spawn points with mutual clearance."""
    if count == 0:
        return []
    order = rng.permutation(len(lane_map.spawn_points))
    placed = []
    for idx in order:
        if len(placed) >= count:
            break
        lane_id, s = lane_map.spawn_points[int(idx)]
        p = lane_map.lanes[lane_id].line.point_at(s)
        if ego is not None and math.hypot(p[0] - ego.x, p[1] - ego.y) < clearance:
            continue
        if any(math.hypot(p[0] - q.x, p[1] - q.y) < clearance for q in placed):
            continue
        cruise = float(rng.uniform(3.2, 4.4))
        trip_seed = int(rng.integers(0, 2 ** 31 - 1))
        placed.append(npc_from_spawn(lane_map, len(placed), lane_id, s, cruise, trip_seed))
    if len(placed) < count:
        raise SpawnConflict(f"placed {len(placed)} of {count} cars")
    return placed


def spawn_ego(lane_map: LaneMap, rng: np.random.Generator, margin: float = 5.0) -> EgoState:
    """Ego at a random spawn point, aligned with its lane, at rest."""
    idx = int(rng.integers(0, len(lane_map.spawn_points)))
    lane_id, s = lane_map.spawn_points[idx]
    lane = lane_map.lanes[lane_id]
    s = min(s, max(0.0, lane.length - margin))
    p = lane.line.point_at(s)
    theta = float(lane.line.heading_at(s))
    return EgoState(float(p[0]), float(p[1]), theta, 0.0)
