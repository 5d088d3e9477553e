"""State grid anchoring, multilinear interpolation, and the action set."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microdrive.grids import (
    BRAKE_INDEX,
    N_ACTIONS,
    ActionGrid,
    GridSpec,
    PlanConfig,
    ValueGrid,
    interpolate,
    interpolate_many,
    zero_grid,
)


def _small_spec(**kw):
    base = dict(anchor_x=3.0, anchor_y=-2.0, anchor_theta=0.4,
                n_pos=8, d_pos=0.5, n_theta=3, d_theta=0.6, n_v=3, d_v=2.0)
    base.update(kw)
    return GridSpec(**base)


def _filled(spec, seed=0):
    rng = np.random.default_rng(seed)
    return ValueGrid(rng.uniform(0.0, 4.0, spec.shape), spec)


class TestAnchoring:
    def test_anchor_is_a_bin_center(self):
        spec = _small_spec()
        fx, fy, ft, fv = spec.fractional_coords(
            np.array([[spec.anchor_x, spec.anchor_y, spec.anchor_theta, 3.0]]))
        assert fx[0] == pytest.approx(spec.n_pos / 2)
        assert fy[0] == pytest.approx(spec.n_pos / 2)
        assert ft[0] == pytest.approx(spec.n_theta // 2)
        assert fv[0] == pytest.approx((3.0 - spec.v_lo) / spec.d_v - 0.5)

    def test_bitwise_exact_at_wrap_free_centers(self):
        # relative heading 0 passes through angle wrapping untouched, so the
        # x/y/v sub-lattice must read back bit-for-bit
        spec = _small_spec(anchor_theta=0.0)
        grid = _filled(spec)
        mid_t = spec.n_theta // 2
        states = spec.cell_states_world()[:, :, mid_t, :].reshape(-1, 4)
        got = interpolate_many(grid, states)
        np.testing.assert_array_equal(got, grid.values[:, :, mid_t, :].reshape(-1))

    def test_exact_at_all_centers(self):
        # nonzero relative headings round-trip wrap_angle at a few ulp
        spec = _small_spec()
        grid = _filled(spec)
        states = spec.cell_states_world().reshape(-1, 4)
        got = interpolate_many(grid, states)
        np.testing.assert_allclose(got, grid.values.reshape(-1),
                                   rtol=1e-10, atol=1e-12)

    def test_default_spec_dimensions(self):
        spec = GridSpec(0.0, 0.0, 0.0)
        assert spec.shape == (96, 96, 5, 4)
        assert spec.d_pos == pytest.approx(1.0 / 3.0)
        assert spec.d_theta == pytest.approx(np.deg2rad(38.0))
        assert spec.v_centers()[0] == pytest.approx(1.0)
        assert spec.v_centers()[-1] == pytest.approx(7.0)


class TestInterpolation:
    def test_midpoint_in_speed_is_arithmetic_mean(self):
        spec = _small_spec()
        grid = _filled(spec)
        centers = spec.cell_states_world()
        a = centers[4, 4, 1, 0].copy()
        b = centers[4, 4, 1, 1].copy()
        mid = a.copy()
        mid[3] = 0.5 * (a[3] + b[3])
        want = 0.5 * (grid.values[4, 4, 1, 0] + grid.values[4, 4, 1, 1])
        assert interpolate(grid, mid) == pytest.approx(want, abs=1e-12)

    def test_out_of_span_is_zero(self):
        spec = _small_spec()
        grid = _filled(spec)
        far = np.array([
            [spec.anchor_x + 100.0, spec.anchor_y, spec.anchor_theta, 3.0],
            [spec.anchor_x, spec.anchor_y + 100.0, spec.anchor_theta, 3.0],
            [spec.anchor_x, spec.anchor_y, spec.anchor_theta + 3.0, 3.0],
            [spec.anchor_x, spec.anchor_y, spec.anchor_theta, 99.0],
            [spec.anchor_x, spec.anchor_y, spec.anchor_theta, -99.0],
        ])
        np.testing.assert_array_equal(interpolate_many(grid, far), 0.0)

    def test_matches_scipy_regular_grid_oracle(self):
        from scipy.interpolate import RegularGridInterpolator

        spec = _small_spec()
        grid = _filled(spec, seed=3)
        rgi = RegularGridInterpolator(
            (np.arange(spec.n_pos), np.arange(spec.n_pos),
             np.arange(spec.n_theta), np.arange(spec.n_v)),
            grid.values, bounds_error=False, fill_value=None)
        rng = np.random.default_rng(7)
        # interior queries only: inside the center hull both definitions agree
        f = rng.uniform([0, 0, 0, 0],
                        [spec.n_pos - 1, spec.n_pos - 1, spec.n_theta - 1, spec.n_v - 1],
                        size=(200, 4))
        # map fractional coordinates back to world states
        c0, s0 = np.cos(spec.anchor_theta), np.sin(spec.anchor_theta)
        xf = (f[:, 0] - spec.n_pos / 2) * spec.d_pos
        yf = (f[:, 1] - spec.n_pos / 2) * spec.d_pos
        states = np.column_stack([
            spec.anchor_x + c0 * xf - s0 * yf,
            spec.anchor_y + s0 * xf + c0 * yf,
            spec.anchor_theta + (f[:, 2] - spec.n_theta // 2) * spec.d_theta,
            spec.v_lo + (f[:, 3] + 0.5) * spec.d_v,
        ])
        got = interpolate_many(grid, states)
        want = rgi(f)
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_edge_fade_to_dimension_border(self):
        """Between the last bin center and the bin edge, the missing
        neighbor contributes zero, so the value fades toward zero."""
        spec = _small_spec()
        grid = ValueGrid(np.ones(spec.shape), spec)
        centers = spec.cell_states_world()
        edge_state = centers[-1, 4, 1, 1].copy()
        # quarter cell beyond the last position center, still in span
        c0, s0 = np.cos(spec.anchor_theta), np.sin(spec.anchor_theta)
        edge_state[0] += 0.25 * spec.d_pos * c0
        edge_state[1] += 0.25 * spec.d_pos * s0
        assert interpolate(grid, edge_state) == pytest.approx(0.75)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=40, deadline=None)
    def test_convex_combination_bounds(self, seed):
        spec = _small_spec()
        grid = _filled(spec, seed=11)
        rng = np.random.default_rng(seed)
        state = np.array([
            spec.anchor_x + rng.uniform(-3, 3),
            spec.anchor_y + rng.uniform(-3, 3),
            spec.anchor_theta + rng.uniform(-1.1, 1.1),
            rng.uniform(-1.0, 8.0),
        ])
        val = interpolate(grid, state)
        assert 0.0 <= val <= grid.values.max() + 1e-12


class TestActionGrid:
    def test_default_action_count(self):
        g = ActionGrid()
        assert g.n_actions == N_ACTIONS == 28
        assert g.brake_index == BRAKE_INDEX == 27

    def test_tables_cover_ranges(self):
        g = ActionGrid()
        s, t, b = g.tables()
        assert s.min() == -1.0 and s.max() == 1.0
        assert t.min() == 0.0 and t.max() == 1.0
        assert b.sum() == 1 and b[-1]
        assert s[g.brake_index] == 0.0 and t[g.brake_index] == 0.0

    def test_action_objects_round_trip_tables(self):
        g = ActionGrid()
        s, t, b = g.tables()
        for i in range(g.n_actions):
            a = g.action(i)
            assert a.steer == s[i] and a.throttle == t[i] and a.brake == bool(b[i])

    def test_index_layout(self):
        g = ActionGrid()
        s, t, _ = g.tables()
        # steer-major, throttle-minor
        assert s[0] == -1.0 and t[0] == 0.0
        assert s[1] == -1.0 and t[1] == 0.5
        assert s[3] == pytest.approx(-0.75)


class TestPlanConfig:
    def test_defaults(self):
        cfg = PlanConfig()
        assert cfg.gamma == 0.9
        assert cfg.horizon == 5
        assert cfg.dt == pytest.approx(0.25)

    def test_validation(self):
        with pytest.raises(ValueError):
            PlanConfig(gamma=0.0)
        with pytest.raises(ValueError):
            PlanConfig(horizon=0)
