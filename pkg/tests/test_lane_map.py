"""Map topology, command routing, signals, and the map file format."""

import math

import numpy as np
import pytest

from microdrive.lane_map import (
    Command,
    LightPhase,
    load_map,
    read_map,
    write_map,
)


class TestValidation:
    def test_builtin_maps_validate(self, town_a, town_b):
        for m in (town_a, town_b):
            m.validate()
            for lane in m.lanes.values():
                assert lane.line.points.shape[0] >= 2
                assert lane.width > 0
                for s in lane.successors:
                    assert s in m.lanes
            for sl in m.stop_lines:
                assert 0.0 <= sl.s <= m.lanes[sl.lane_id].length
                assert sl.light_id in m.lights
            for lane_id, s in m.spawn_points:
                assert 0.0 <= s <= m.lanes[lane_id].length

    def test_command_set(self):
        assert len(Command) == 6
        assert {c.name for c in Command} == {
            "TURN_LEFT", "TURN_RIGHT", "GO_STRAIGHT",
            "FOLLOW_LANE", "CHANGE_LEFT", "CHANGE_RIGHT"}


class TestJunctionRouting:
    """Successor choice at the signalized T at node B of the training town.

    Lane "eb" runs southbound into the junction; its two connectors leave
    eastbound (a left turn) and westbound (a right turn).
    """

    def _pose_on(self, town, lane_id, s_back=6.0):
        lane = town.lanes[lane_id]
        s = lane.length - s_back
        p = lane.line.point_at(np.array([s]))[0]
        h = float(lane.line.heading_at(np.array([s]))[0])
        return float(p[0]), float(p[1]), h

    def test_turn_angles_classify_the_t(self, town_a):
        left = town_a.turn_angle("eb", "b:eb-bc")
        right = town_a.turn_angle("eb", "b:eb-ba")
        assert left > math.radians(25.0)
        assert right < -math.radians(25.0)

    def test_turn_right_picks_right_connector(self, town_a):
        x, y, h = self._pose_on(town_a, "eb")
        chain = town_a.build_chain(x, y, h, Command.TURN_RIGHT)
        assert "b:eb-ba" in chain.lane_ids
        assert "b:eb-bc" not in chain.lane_ids
        assert not chain.fallback

    def test_turn_left_picks_left_connector(self, town_a):
        x, y, h = self._pose_on(town_a, "eb")
        chain = town_a.build_chain(x, y, h, Command.TURN_LEFT)
        assert "b:eb-bc" in chain.lane_ids
        assert "b:eb-ba" not in chain.lane_ids
        assert not chain.fallback

    def test_go_straight_through_junction(self, town_a):
        x, y, h = self._pose_on(town_a, "abb")
        chain = town_a.build_chain(x, y, h, Command.GO_STRAIGHT)
        assert "b:abb-bc" in chain.lane_ids
        assert not chain.fallback

    def test_change_right_onto_passing_lane(self, town_a):
        lane = town_a.lanes["aba"]
        p = lane.line.point_at(np.array([lane.length * 0.7]))[0]
        h = float(lane.line.heading_at(np.array([lane.length * 0.7]))[0])
        chain = town_a.build_chain(p[0], p[1], h, Command.CHANGE_RIGHT)
        assert chain.lane_ids[0] == "ab2"
        assert not chain.fallback

    def test_change_without_neighbor_falls_back(self, town_a):
        lane = town_a.lanes["ba"]
        p = lane.line.point_at(np.array([lane.length * 0.5]))[0]
        h = float(lane.line.heading_at(np.array([lane.length * 0.5]))[0])
        chain = town_a.build_chain(p[0], p[1], h, Command.CHANGE_LEFT)
        assert chain.fallback
        assert chain.lane_ids[0] == "ba"


class TestChainGeometry:
    def test_chain_covers_back_and_forward(self, town_a):
        lane = town_a.lanes["be"]
        p = lane.line.point_at(np.array([lane.length * 0.5]))[0]
        h = float(lane.line.heading_at(np.array([lane.length * 0.5]))[0])
        chain = town_a.build_chain(p[0], p[1], h, Command.FOLLOW_LANE,
                                   back=25.0, forward=70.0)
        assert chain.s_query >= 25.0 - 1e-6
        assert chain.line.length - chain.s_query >= 70.0 - 1e-6

    def test_chain_is_continuous(self, town_a):
        lane = town_a.lanes["abb"]
        p = lane.line.point_at(np.array([2.0]))[0]
        chain = town_a.build_chain(p[0], p[1], 0.0, Command.FOLLOW_LANE)
        for a, b in zip(chain.lane_ids, chain.lane_ids[1:]):
            end = town_a.lanes[a].line.points[-1]
            start = town_a.lanes[b].line.points[0]
            assert np.hypot(*(end - start)) < 1e-6
        total = sum(town_a.lanes[i].length for i in chain.lane_ids)
        assert chain.line.length == pytest.approx(total, abs=1e-6)

    def test_stop_events_lie_on_chain(self, town_a):
        lane = town_a.lanes["abb"]
        p = lane.line.point_at(np.array([2.0]))[0]
        chain = town_a.build_chain(p[0], p[1], 0.0, Command.GO_STRAIGHT)
        assert chain.stop_events, "route through B must cross its stop line"
        for s, light_id in chain.stop_events:
            assert 0.0 <= s <= chain.line.length
            assert light_id in town_a.lights

    def test_locate_uses_heading(self, town_a):
        # the two directions of the bottom avenue overlap in x; heading
        # disambiguates
        east = town_a.lanes["aba"]
        west = town_a.lanes["ba"]
        pe = east.line.point_at(np.array([10.0]))[0]
        pw = west.line.point_at(np.array([10.0]))[0]
        le, _, _ = town_a.locate(pe[0], pe[1], 0.0)
        lw, _, _ = town_a.locate(pw[0], pw[1], math.pi)
        assert le == "aba"
        assert lw == "ba"


class TestLights:
    def test_phase_partition(self, town_a):
        for light in town_a.lights.values():
            ts = np.linspace(0.0, 2.0 * light.cycle, 400)
            seen = {light.phase_at(float(t)) for t in ts}
            assert seen == {LightPhase.GREEN, LightPhase.YELLOW, LightPhase.RED}
            g = sum(light.phase_at(float(t)) == LightPhase.GREEN for t in ts)
            assert g / len(ts) == pytest.approx(light.green / light.cycle, abs=0.05)

    def test_phase_is_periodic(self, town_a):
        light = next(iter(town_a.lights.values()))
        for t in (0.0, 3.7, 19.2, 35.9):
            assert light.phase_at(t) == light.phase_at(t + light.cycle)
            assert light.phase_at(t) == light.phase_at(t + 5 * light.cycle)


class TestMapFile:
    def test_round_trip(self, town_a, tmp_path):
        path = tmp_path / "a.map"
        write_map(town_a, str(path))
        back = read_map(str(path))
        assert back.name == town_a.name
        assert set(back.lanes) == set(town_a.lanes)
        for lid, lane in town_a.lanes.items():
            other = back.lanes[lid]
            assert other.successors == lane.successors
            assert other.left == lane.left and other.right == lane.right
            assert other.width == pytest.approx(lane.width)
            np.testing.assert_allclose(other.line.points, lane.line.points,
                                       atol=1e-9)
        assert len(back.stop_lines) == len(town_a.stop_lines)
        assert set(back.lights) == set(town_a.lights)
        assert back.spawn_points == town_a.spawn_points

    def test_reserialization_is_stable(self, town_b, tmp_path):
        p1 = tmp_path / "b1.map"
        p2 = tmp_path / "b2.map"
        write_map(town_b, str(p1))
        write_map(read_map(str(p1)), str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_map_rejects_unknown(self):
        with pytest.raises((FileNotFoundError, OSError, ValueError)):
            load_map("town-z")
