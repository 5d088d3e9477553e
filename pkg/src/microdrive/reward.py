"""Reward model: smooth lane-keeping reward with stop-zone overrides.

The reward at an imagined ego state is evaluated against the target chain
of the active command. Outside any zero-speed region it is a product of
triangular kernels over lateral offset, heading error, and speed error
(peak 1 at the desired state, hitting 0 at each tolerance). Inside a
zero-speed region the vehicle is paid a small multiple of r_stop for being
slow: behind a non-green stop line orientation and lateral position stop
mattering entirely; near leading traffic the lateral factor is kept so the
zone does not reward stopping off-lane. Red-light zones take precedence.

Braking inside a zero-speed region earns a flat bonus r_brake, reported as
a separate channel so the planner can keep it out of accumulated value.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from microdrive.geometry import wrap_angle
from microdrive.lane_map import Command, LaneMap, LightPhase
from microdrive.world import EgoState, WorldSnapshot


@dataclass(frozen=True)
class RewardConfig:
    r_stop: float = 0.01
    r_brake: float = 5.0
    lat_tol: float = 1.75            # lane half-width
    head_tol: float = float(np.deg2rad(38.0))
    v_target: float = 6.0
    v_tol: float = 4.0
    proximity_radius: float = 6.0    # traffic zero-speed reach, disc gap
    zone_length: float = 8.0         # red-light zone behind the stop line

    def __post_init__(self):
        if not (0.0 < self.r_stop <= 1.0):
            raise ValueError("r_stop must be in (0, 1]")
        if self.r_brake < 0:
            raise ValueError("r_brake must be >= 0")
        for name in ("lat_tol", "head_tol", "v_tol", "proximity_radius", "zone_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


class ZoneKind(enum.IntEnum):
    NONE = 0
    RED_LIGHT = 1
    TRAFFIC = 2


def triangular(u, tol):
    return np.maximum(0.0, 1.0 - np.abs(u) / tol)


def target_lane(lane_map: LaneMap, ego: EgoState, command, chain=None):
    """(lane_id, signed lateral offset, heading error, arc length) vs the
    command's target chain. Offset is positive left of the chain direction."""
    if chain is None:
        chain = lane_map.build_chain(ego.x, ego.y, ego.theta, command)
    s, off, heading = chain.line.project(ego.x, ego.y)
    dhead = wrap_angle(ego.theta - heading)
    return chain.lane_at(float(s)), float(off), float(dhead), float(s)


class RewardField:
    """Reward evaluation along one target chain.

    Both the scalar query path and the dense grid path run through the same
    projection and kernel arithmetic, so a grid cell and a point query at
    the same state agree bit for bit.
    """

    def __init__(self, lane_map: LaneMap, chain, config: RewardConfig):
        self.lane_map = lane_map
        self.chain = chain
        self.cfg = config

    # -- zones ---------------------------------------------------------------

    def zone_at(self, snapshot: WorldSnapshot, s_q):
        """ZoneKind codes for chain arc positions s_q (array-safe)."""
        s_q = np.asarray(s_q, dtype=np.float64)
        kind = np.zeros(s_q.shape, dtype=np.int8)
        half_w = self.chain.width / 2.0
        for npc in snapshot.npcs:
            s_n, off_n, _ = self.chain.line.project(npc.x, npc.y)
            if abs(float(off_n)) > half_w:
                continue
            r_disc = float(np.hypot(npc.half_len, npc.half_wid))
            hit = (s_q < float(s_n)) & (float(s_n) - s_q - r_disc <= self.cfg.proximity_radius)
            kind = np.where(hit, np.int8(ZoneKind.TRAFFIC), kind)
        for s_ev, light_id in self.chain.stop_events:
            phase = snapshot.light_phases.get(light_id, LightPhase.GREEN)
            if phase == LightPhase.GREEN:
                continue
            hit = (s_q >= s_ev - self.cfg.zone_length) & (s_q <= s_ev)
            kind = np.where(hit, np.int8(ZoneKind.RED_LIGHT), kind)
        return kind

    # -- continuous path -----------------------------------------------------

    def _frame(self, states):
        states = np.asarray(states, dtype=np.float64)
        s, off, heading = self.chain.line.project(states[..., 0], states[..., 1])
        dhead = wrap_angle(states[..., 2] - heading)
        return s, off, dhead

    def drive_at(self, snapshot: WorldSnapshot, states):
        """Drive reward at world states (..., 4)."""
        states = np.asarray(states, dtype=np.float64)
        s, off, dhead = self._frame(states)
        v = states[..., 3]
        zone = self.zone_at(snapshot, s)
        k_lat = triangular(off, self.cfg.lat_tol)
        k_head = triangular(dhead, self.cfg.head_tol)
        k_v6 = triangular(v - self.cfg.v_target, self.cfg.v_tol)
        k_v0 = triangular(v, self.cfg.v_tol)
        cruise = (k_lat * k_head) * k_v6
        red = self.cfg.r_stop * k_v0
        traffic = (self.cfg.r_stop * k_v0) * k_lat
        return np.where(zone == ZoneKind.RED_LIGHT, red,
                        np.where(zone == ZoneKind.TRAFFIC, traffic, cruise))

    def brake_bonus_at(self, snapshot: WorldSnapshot, states):
        """Bonus earned by the brake action at world states (..., 4)."""
        s, _, _ = self._frame(states)
        zone = self.zone_at(snapshot, s)
        return np.where(zone != ZoneKind.NONE, self.cfg.r_brake, 0.0)

    # -- grid path -----------------------------------------------------------

    def _grid_frame(self, spec):
        """Chain-relative geometry of grid cell positions, cached per spec."""
        cached = getattr(self, "_frame_cache", None)
        if cached is not None and cached[0] is spec:
            return cached[1]
        u = spec.pos_centers()
        c0, s0 = np.cos(spec.anchor_theta), np.sin(spec.anchor_theta)
        x = spec.anchor_x + c0 * u[:, None] - s0 * u[None, :]
        y = spec.anchor_y + s0 * u[:, None] + c0 * u[None, :]
        s, off, heading = self.chain.line.project(x.ravel(), y.ravel())
        s = s.reshape(x.shape)
        k_lat = triangular(off.reshape(x.shape), self.cfg.lat_tol)
        theta_w = spec.anchor_theta + spec.theta_centers()
        dhead = wrap_angle(theta_w[None, None, :] - heading.reshape(x.shape)[:, :, None])
        k_head = triangular(dhead, self.cfg.head_tol)
        v = spec.v_centers()
        k_v6 = triangular(v - self.cfg.v_target, self.cfg.v_tol)
        k_v0 = triangular(v, self.cfg.v_tol)
        out = (s, k_lat, k_head, k_v6, k_v0)
        self._frame_cache = (spec, out)
        return out

    def drive_grid(self, snapshot: WorldSnapshot, spec):
        """Drive reward at every cell center: (n_pos, n_pos, n_theta, n_v)."""
        s, k_lat, k_head, k_v6, k_v0 = self._grid_frame(spec)
        zone = self.zone_at(snapshot, s)
        cruise = ((k_lat[:, :, None] * k_head)[:, :, :, None] * k_v6[None, None, None, :])
        red = self.cfg.r_stop * k_v0
        traffic = (self.cfg.r_stop * k_v0)[None, :] * k_lat.reshape(-1)[:, None]
        flat = cruise.reshape(-1, spec.n_theta, spec.n_v)
        zflat = zone.reshape(-1)
        is_red = zflat == ZoneKind.RED_LIGHT
        is_tr = zflat == ZoneKind.TRAFFIC
        flat[is_red] = red[None, None, :]
        flat[is_tr] = traffic[is_tr][:, None, :]
        return flat.reshape(spec.n_pos, spec.n_pos, spec.n_theta, spec.n_v)

    def bonus_grid(self, snapshot: WorldSnapshot, spec):
        """Brake-action bonus at every cell position: (n_pos, n_pos)."""
        s = self._grid_frame(spec)[0]
        zone = self.zone_at(snapshot, s)
        return np.where(zone != ZoneKind.NONE, self.cfg.r_brake, 0.0)


def zero_speed_region(lane_map: LaneMap, snapshot: WorldSnapshot, ego: EgoState,
                      config: RewardConfig | None = None, command=Command.FOLLOW_LANE) -> ZoneKind:
    """Zone classification of the ego's own position on its command chain."""
    cfg = config or RewardConfig()
    chain = lane_map.build_chain(ego.x, ego.y, ego.theta, command)
    field = RewardField(lane_map, chain, cfg)
    s, _, _ = chain.line.project(ego.x, ego.y)
    return ZoneKind(int(field.zone_at(snapshot, float(s))))


def reward(lane_map: LaneMap, snapshot: WorldSnapshot, ego: EgoState, action,
           command, config: RewardConfig | None = None, chain=None):
    """(drive_reward, brake_bonus) for a single query.

    The bonus channel is r_brake iff the action brakes inside a zero-speed
    region; it is returned separately so accumulation can exclude it.
    """
    cfg = config or RewardConfig()
    if chain is None:
        chain = lane_map.build_chain(ego.x, ego.y, ego.theta, command)
    field = RewardField(lane_map, chain, cfg)
    state = np.array([ego.x, ego.y, ego.theta, ego.v])[None, :]
    drive = float(field.drive_at(snapshot, state)[0])
    bonus = float(field.brake_bonus_at(snapshot, state)[0]) if action.brake else 0.0
    return drive, bonus
