"""Reward semantics: kernels, zero-speed zones, scalar/grid agreement."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microdrive.grids import GridSpec
from microdrive.lane_map import Command
from microdrive.reward import (
    RewardConfig,
    RewardField,
    ZoneKind,
    reward,
    target_lane,
    triangular,
    zero_speed_region,
)
from microdrive.world import Action, EgoState, NPCState, initial_snapshot


def _pose_on(town, lane_id, s, v=6.0, lat=0.0, dhead=0.0):
    lane = town.lanes[lane_id]
    p = lane.line.point_at(s)
    h = float(lane.line.heading_at(s))
    nx, ny = -math.sin(h), math.cos(h)
    return EgoState(float(p[0]) + lat * nx, float(p[1]) + lat * ny,
                    h + dhead, v)


def _red_tick(town, light_id):
    light = town.lights[light_id]
    return int(round((light.offset + light.green + light.yellow + 2.0) * 20))


def _green_tick(town, light_id):
    light = town.lights[light_id]
    return int(round((light.offset + 1.0) * 20))


class TestKernels:
    def test_peak_reward_is_one(self, town_a):
        snap = initial_snapshot(town_a, [], tick=_green_tick(town_a, "b.main"))
        ego = _pose_on(town_a, "bc", 30.0, v=6.0)
        drive, bonus = reward(town_a, snap, ego, Action(0, 0.5, False),
                              Command.FOLLOW_LANE)
        assert drive == pytest.approx(1.0, abs=1e-9)
        assert bonus == 0.0

    def test_offset_beyond_tolerance_is_zero(self, town_a):
        snap = initial_snapshot(town_a, [], tick=_green_tick(town_a, "b.main"))
        ego = _pose_on(town_a, "bc", 30.0, v=6.0, lat=1.9)
        drive, _ = reward(town_a, snap, ego, Action(), Command.FOLLOW_LANE)
        assert drive == 0.0

    def test_kernel_factorization(self, town_a):
        cfg = RewardConfig()
        snap = initial_snapshot(town_a, [], tick=_green_tick(town_a, "b.main"))
        ego = _pose_on(town_a, "bc", 30.0, v=4.0, lat=0.7, dhead=0.2)
        drive, _ = reward(town_a, snap, ego, Action(), Command.FOLLOW_LANE, cfg)
        want = ((1 - 0.7 / cfg.lat_tol) * (1 - 0.2 / cfg.head_tol)
                * (1 - 2.0 / cfg.v_tol))
        assert drive == pytest.approx(want, abs=1e-6)

    def test_triangular_shape(self):
        assert triangular(0.0, 2.0) == 1.0
        assert triangular(1.0, 2.0) == 0.5
        assert triangular(-1.0, 2.0) == 0.5
        assert triangular(2.0, 2.0) == 0.0
        assert triangular(5.0, 2.0) == 0.0


class TestZones:
    def test_green_empty_road_is_none(self, town_a):
        snap = initial_snapshot(town_a, [], tick=_green_tick(town_a, "b.main"))
        ego = _pose_on(town_a, "abb", 5.0, v=4.0)
        assert zero_speed_region(town_a, snap, ego) == ZoneKind.NONE

    def test_red_light_zone_geometry(self, town_a):
        # stop line sits 0.5 m before the end of abb; 3 m behind it is in
        # the 8 m zone, 10 m behind is out
        sl = town_a.stop_lines_on("abb")[0]
        snap = initial_snapshot(town_a, [], tick=_red_tick(town_a, "b.main"))
        inside = _pose_on(town_a, "abb", sl.s - 3.0, v=2.0)
        outside = _pose_on(town_a, "abb", sl.s - 10.0, v=2.0)
        assert zero_speed_region(town_a, snap, inside) == ZoneKind.RED_LIGHT
        assert zero_speed_region(town_a, snap, outside) == ZoneKind.NONE

    def test_yellow_counts_as_stop(self, town_a):
        light = town_a.lights["b.main"]
        tick = int(round((light.offset + light.green + 0.5 * light.yellow) * 20))
        sl = town_a.stop_lines_on("abb")[0]
        snap = initial_snapshot(town_a, [], tick=tick)
        ego = _pose_on(town_a, "abb", sl.s - 3.0, v=2.0)
        assert zero_speed_region(town_a, snap, ego) == ZoneKind.RED_LIGHT

    def test_traffic_proximity_zone(self, town_a):
        tick = _green_tick(town_a, "b.main")
        ego = _pose_on(town_a, "bc", 20.0, v=3.0)
        lane = town_a.lanes["bc"]
        p = lane.line.point_at(24.0)
        npc = NPCState(0, float(p[0]), float(p[1]), float(lane.line.heading_at(24.0)), 0.0)
        snap = initial_snapshot(town_a, [npc], tick=tick)
        assert zero_speed_region(town_a, snap, ego) == ZoneKind.TRAFFIC
        far = initial_snapshot(
            town_a,
            [NPCState(0, *map(float, lane.line.point_at(45.0)),
                      float(lane.line.heading_at(45.0)), 0.0)],
            tick=tick)
        assert zero_speed_region(town_a, far, ego) == ZoneKind.NONE

    def test_red_takes_precedence_over_traffic(self, town_a):
        sl = town_a.stop_lines_on("abb")[0]
        ego = _pose_on(town_a, "abb", sl.s - 2.0, v=1.0)
        lane = town_a.lanes["abb"]
        p = lane.line.point_at(sl.s)
        npc = NPCState(0, float(p[0]), float(p[1]), 0.0, 0.0)
        snap = initial_snapshot(town_a, [npc], tick=_red_tick(town_a, "b.main"))
        assert zero_speed_region(town_a, snap, ego) == ZoneKind.RED_LIGHT

    def test_zone_rewards(self, town_a):
        cfg = RewardConfig()
        sl = town_a.stop_lines_on("abb")[0]
        snap = initial_snapshot(town_a, [], tick=_red_tick(town_a, "b.main"))
        stopped = _pose_on(town_a, "abb", sl.s - 3.0, v=0.0)
        drive, bonus = reward(town_a, snap, stopped, Action(brake=True),
                              Command.FOLLOW_LANE, cfg)
        assert drive == pytest.approx(cfg.r_stop)
        assert bonus == cfg.r_brake
        # orientation does not matter behind a red light
        skew = _pose_on(town_a, "abb", sl.s - 3.0, v=0.0, dhead=1.2)
        drive2, _ = reward(town_a, snap, skew, Action(), Command.FOLLOW_LANE, cfg)
        assert drive2 == pytest.approx(cfg.r_stop)

    def test_no_bonus_without_zone_or_brake(self, town_a):
        cfg = RewardConfig()
        snap = initial_snapshot(town_a, [], tick=_green_tick(town_a, "b.main"))
        ego = _pose_on(town_a, "bc", 30.0, v=0.0)
        _, b1 = reward(town_a, snap, ego, Action(brake=True), Command.FOLLOW_LANE, cfg)
        assert b1 == 0.0
        sl = town_a.stop_lines_on("abb")[0]
        red = initial_snapshot(town_a, [], tick=_red_tick(town_a, "b.main"))
        in_zone = _pose_on(town_a, "abb", sl.s - 3.0, v=0.0)
        _, b2 = reward(town_a, red, in_zone, Action(0.0, 0.4, False),
                       Command.FOLLOW_LANE, cfg)
        assert b2 == 0.0


class TestTargetLane:
    def test_centered_pose(self, town_a):
        ego = _pose_on(town_a, "bc", 30.0)
        lane_id, off, dhead, s = target_lane(town_a, ego, Command.FOLLOW_LANE)
        assert lane_id == "bc"
        assert off == pytest.approx(0.0, abs=1e-9)
        assert dhead == pytest.approx(0.0, abs=1e-9)

    def test_left_offset_is_positive(self, town_a):
        ego = _pose_on(town_a, "bc", 30.0, lat=1.0)
        _, off, _, _ = target_lane(town_a, ego, Command.FOLLOW_LANE)
        assert off == pytest.approx(1.0, abs=1e-6)


class TestGridScalarAgreement:
    def test_grid_equals_pointwise(self, town_a):
        cfg = RewardConfig()
        ego = _pose_on(town_a, "abb", 10.0, v=3.0)
        chain = town_a.build_chain(ego.x, ego.y, ego.theta, Command.FOLLOW_LANE)
        field = RewardField(town_a, chain, cfg)
        snap = initial_snapshot(town_a, [], tick=_red_tick(town_a, "b.main"))
        spec = GridSpec(ego.x, ego.y, ego.theta, n_pos=24, n_theta=5, n_v=4)
        grid = field.drive_grid(snap, spec)
        states = spec.cell_states_world()
        rng = np.random.default_rng(0)
        for _ in range(60):
            i, j, k, l = (rng.integers(0, n) for n in spec.shape)
            got = field.drive_at(snap, states[i, j, k, l][None, :])[0]
            assert got == grid[i, j, k, l]

    def test_bonus_grid_matches_zone(self, town_a):
        cfg = RewardConfig()
        sl = town_a.stop_lines_on("abb")[0]
        ego = _pose_on(town_a, "abb", sl.s - 4.0, v=2.0)
        chain = town_a.build_chain(ego.x, ego.y, ego.theta, Command.FOLLOW_LANE)
        field = RewardField(town_a, chain, cfg)
        snap = initial_snapshot(town_a, [], tick=_red_tick(town_a, "b.main"))
        spec = GridSpec(ego.x, ego.y, ego.theta, n_pos=24, n_theta=3, n_v=2)
        bonus = field.bonus_grid(snap, spec)
        assert set(np.unique(bonus)) <= {0.0, cfg.r_brake}
        assert (bonus == cfg.r_brake).any()


class TestFuzzBounds:
    @given(st.integers(0, 10 ** 9))
    @settings(max_examples=80, deadline=None)
    def test_reward_bounded_and_finite(self, seed, town_a=None):
        # bound the drive reward anywhere in the map under arbitrary zones
        from microdrive.lane_map import load_map

        town = load_map("town-a")
        rng = np.random.default_rng(seed)
        ego = EgoState(rng.uniform(-20, 200), rng.uniform(-20, 110),
                       rng.uniform(-np.pi, np.pi), rng.uniform(0, 9))
        npcs = []
        if rng.random() < 0.5:
            npcs = [NPCState(0, ego.x + rng.uniform(-8, 8),
                             ego.y + rng.uniform(-8, 8),
                             rng.uniform(-np.pi, np.pi), 0.0)]
        snap = initial_snapshot(town, npcs, tick=int(rng.integers(0, 720)))
        cmd = Command(int(rng.integers(0, 6)))
        action = Action(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)),
                        bool(rng.random() < 0.3))
        drive, bonus = reward(town, snap, ego, action, cmd)
        assert np.isfinite(drive) and np.isfinite(bonus)
        assert 0.0 <= drive <= 1.0
        assert bonus in (0.0, RewardConfig().r_brake)
