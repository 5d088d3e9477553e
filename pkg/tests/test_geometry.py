import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microdrive.geometry import (Polyline, frame_to_world, obb_overlap_depth,
                                 rotate_xy, sample_arc, world_to_frame, wrap_angle)


@given(st.floats(-50.0, 50.0))
def test_wrap_angle_range_and_identity(theta):
    w = wrap_angle(theta)
    assert -np.pi <= w <= np.pi
    # same direction: sin/cos agree
    assert np.cos(w) == pytest.approx(np.cos(theta), abs=1e-12)
    assert np.sin(w) == pytest.approx(np.sin(theta), abs=1e-12)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-7, 7))
def test_frame_round_trip(x, y, theta):
    u, v = world_to_frame(x, y, 3.0, -2.0, theta)
    bx, by = frame_to_world(u, v, 3.0, -2.0, theta)
    assert bx == pytest.approx(x, abs=1e-9)
    assert by == pytest.approx(y, abs=1e-9)


def test_rotate_xy_quarter_turn():
    x, y = rotate_xy(1.0, 0.0, np.pi / 2)
    assert x == pytest.approx(0.0, abs=1e-12)
    assert y == pytest.approx(1.0)


class TestPolyline:
    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            Polyline([[0.0, 0.0]])
        with pytest.raises(ValueError):
            Polyline([[0.0, 0.0], [0.0, 0.0]])

    def test_point_at_matches_linear_interp_on_straight(self):
        line = Polyline([[0.0, 0.0], [10.0, 0.0]])
        s = np.array([0.0, 2.5, 10.0, 15.0])
        p = line.point_at(s)
        assert np.allclose(p[:, 0], [0.0, 2.5, 10.0, 10.0])
        assert np.allclose(p[:, 1], 0.0)

    def test_project_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        pts = np.cumsum(rng.uniform(-1, 1, size=(12, 2)), axis=0) * 3.0
        line = Polyline(pts)
        # dense sampling of the polyline is an independent nearest-point oracle
        s_dense = np.linspace(0.0, line.length, 20001)
        dense = line.point_at(s_dense)
        for _ in range(50):
            q = rng.uniform(-10, 10, size=2) + pts[rng.integers(len(pts))]
            s, off, head = line.project(q[0], q[1])
            d2 = np.sum((dense - q) ** 2, axis=1)
            i = int(np.argmin(d2))
            p_at = line.point_at(np.array([float(s)]))[0]
            best = np.sqrt(d2[i])
            got = np.hypot(q[0] - p_at[0], q[1] - p_at[1])
            assert got <= best + 1e-3

    def test_offset_magnitude_near_line(self):
        # build near-line queries by stepping off along the local normal;
        # for small lateral distances |off| must recover that distance
        rng = np.random.default_rng(1)
        heads = np.cumsum(rng.uniform(-0.3, 0.3, size=12))
        steps = np.stack([np.cos(heads), np.sin(heads)], axis=1) * 5.0
        pts = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
        line = Polyline(pts)
        for _ in range(60):
            s0 = rng.uniform(1.0, line.length - 1.0)
            lat = rng.uniform(-1.5, 1.5)
            base = line.point_at(np.array([s0]))[0]
            h = float(line.heading_at(np.array([s0]))[0])
            q = base + lat * np.array([-np.sin(h), np.cos(h)])
            _, off, _ = line.project(q[0], q[1])
            assert float(off) == pytest.approx(lat, abs=0.25)

    def test_offset_sign_is_left_positive(self):
        line = Polyline([[0.0, 0.0], [10.0, 0.0]])
        _, off_left, _ = line.project(5.0, 2.0)
        _, off_right, _ = line.project(5.0, -2.0)
        assert float(off_left) > 0 > float(off_right)

    def test_heading_continuous_across_vertex(self):
        line = Polyline([[0, 0], [10, 0], [20, 5]])
        s = np.linspace(8.0, 12.0, 400)
        h = line.heading_at(s)
        assert np.max(np.abs(np.diff(h))) < 0.05


def test_sample_arc_endpoints_and_tangents():
    pts = sample_arc((0.0, 0.0), 0.0, (10.0, 10.0), np.pi / 2, n=20)
    assert np.allclose(pts[0], [0.0, 0.0])
    assert np.allclose(pts[-1], [10.0, 10.0])
    d0 = pts[1] - pts[0]
    d1 = pts[-1] - pts[-2]
    assert abs(np.arctan2(d0[1], d0[0])) < 0.05
    assert abs(np.arctan2(d1[1], d1[0]) - np.pi / 2) < 0.05


class TestObbOverlap:
    def test_separated_is_zero(self):
        assert obb_overlap_depth(0, 0, 0, 1, 1, 5, 0, 0, 1, 1) == 0.0

    def test_axis_aligned_depth_exact(self):
        # 2x2 boxes with centers 3 apart on x: x-overlap = 1+1-3 < 0 -> 0
        assert obb_overlap_depth(0, 0, 0, 1, 1, 3.0, 0, 0, 1, 1) == 0.0
        # centers 1.5 apart: overlap 0.5 on x, 2.0 on y -> depth 0.5
        assert obb_overlap_depth(0, 0, 0, 1, 1, 1.5, 0, 0, 1, 1) == pytest.approx(0.5)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            c0 = rng.uniform(-2, 2, 2)
            c1 = rng.uniform(-2, 2, 2)
            t0, t1 = rng.uniform(-np.pi, np.pi, 2)
            e0 = rng.uniform(0.3, 2.0, 2)
            e1 = rng.uniform(0.3, 2.0, 2)
            base = obb_overlap_depth(*c0, t0, *e0, *c1, t1, *e1)
            # rotate the whole scene by a random angle about the origin
            a = rng.uniform(-np.pi, np.pi)
            r0 = rotate_xy(c0[0], c0[1], a)
            r1 = rotate_xy(c1[0], c1[1], a)
            rot = obb_overlap_depth(r0[0], r0[1], t0 + a, *e0,
                                    r1[0], r1[1], t1 + a, *e1)
            assert rot == pytest.approx(base, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            args = (*rng.uniform(-2, 2, 2), rng.uniform(-3, 3),
                    *rng.uniform(0.3, 2.0, 2))
            brgs = (*rng.uniform(-2, 2, 2), rng.uniform(-3, 3),
                    *rng.uniform(0.3, 2.0, 2))
            assert obb_overlap_depth(*args, *brgs) == pytest.approx(
                obb_overlap_depth(*brgs, *args), abs=1e-12)

    def test_contact_consistent_with_point_sampling(self):
        # positive depth implies sampled interior points of one box land in
        # the other (SAT is exact for convex boxes, sampling approximates)
        rng = np.random.default_rng(5)
        hits = 0
        for _ in range(200):
            c1 = rng.uniform(-2.5, 2.5, 2)
            t0, t1 = rng.uniform(-np.pi, np.pi, 2)
            d = obb_overlap_depth(0, 0, t0, 1.2, 0.7, c1[0], c1[1], t1, 1.2, 0.7)
            if d <= 0.3:
                continue
            hits += 1
            # grid over box 1 interior, transform into box 0 frame, containment
            u, v = np.meshgrid(np.linspace(-1.2, 1.2, 60), np.linspace(-0.7, 0.7, 40))
            u, v = u.ravel(), v.ravel()
            ct, stt = np.cos(t1), np.sin(t1)
            px = c1[0] + u * ct - v * stt
            py = c1[1] + u * stt + v * ct
            c0t, s0t = np.cos(t0), np.sin(t0)
            qx = px * c0t + py * s0t
            qy = -px * s0t + py * c0t
            inside = (np.abs(qx) <= 1.2) & (np.abs(qy) <= 0.7)
            assert inside.any()
        assert hits > 20
