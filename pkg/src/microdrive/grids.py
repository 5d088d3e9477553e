"""Ego-anchored state grid, the discrete action set, and interpolation.

The value tables live on a 4D grid anchored at one recorded ego pose per
frame: 96 x 96 positions at 1/3 m in the anchor's heading frame (first index
forward, second index left), 5 relative orientations at 38 deg per bin, and
4 speed bins of 2 m/s covering [0, 8].

Position bin centers sit at (i - N/2) * d, so the anchor pose itself is
exactly the center of cell (48, 48) and of the middle orientation bin. The
covered span is therefore half a cell asymmetric (-16.0 m to +15.667 m in
centers); queries are valid out to the outer bin edges and are zero beyond
them. Orientation is an interval, not a circle: relative headings beyond
+/-95 deg read as zero value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from microdrive.geometry import wrap_angle
from microdrive.world import Action, DECISION_DT

N_ACTIONS = 28
BRAKE_INDEX = 27


@dataclass(frozen=True)
class GridSpec:
    anchor_x: float
    anchor_y: float
    anchor_theta: float
    n_pos: int = 96
    d_pos: float = 1.0 / 3.0
    n_theta: int = 5
    d_theta: float = float(np.deg2rad(38.0))
    n_v: int = 4
    d_v: float = 2.0
    v_lo: float = 0.0

    def pos_centers(self):
        return (np.arange(self.n_pos) - self.n_pos / 2) * self.d_pos

    def theta_centers(self):
        """Bin centers relative to the anchor heading."""
        return (np.arange(self.n_theta) - self.n_theta // 2) * self.d_theta

    def v_centers(self):
        return self.v_lo + (np.arange(self.n_v) + 0.5) * self.d_v

    @property
    def anchor_cell(self):
        return self.n_pos // 2, self.n_pos // 2, self.n_theta // 2

    @property
    def shape(self):
        return (self.n_pos, self.n_pos, self.n_theta, self.n_v)

    def same_anchor(self, other, tol=0.0):
        return (abs(self.anchor_x - other.anchor_x) <= tol
                and abs(self.anchor_y - other.anchor_y) <= tol
                and abs(self.anchor_theta - other.anchor_theta) <= tol
                and self.shape == other.shape)

    def cell_states_world(self):
        """(n_pos, n_pos, n_theta, n_v, 4) world-frame states of all centers."""
        u = self.pos_centers()
        t = self.theta_centers()
        v = self.v_centers()
        c0, s0 = np.cos(self.anchor_theta), np.sin(self.anchor_theta)
        fwd = u[:, None]
        left = u[None, :]
        x = self.anchor_x + c0 * fwd - s0 * left
        y = self.anchor_y + s0 * fwd + c0 * left
        out = np.empty(self.shape + (4,))
        out[..., 0] = x[:, :, None, None]
        out[..., 1] = y[:, :, None, None]
        out[..., 2] = wrap_angle(self.anchor_theta + t)[None, None, :, None]
        out[..., 3] = v[None, None, None, :]
        return out

    def fractional_coords(self, states):
        """Continuous (fx, fy, ft, fv) grid coordinates of world states.

        A coordinate f is in-span iff -0.5 <= f <= n-0.5 (the bin-edge rule,
        uniform across all four dimensions).
        """
        states = np.asarray(states, dtype=np.float64)
        dx = states[..., 0] - self.anchor_x
        dy = states[..., 1] - self.anchor_y
        c0, s0 = np.cos(self.anchor_theta), np.sin(self.anchor_theta)
        x_f = c0 * dx + s0 * dy
        y_f = -s0 * dx + c0 * dy
        th_r = wrap_angle(states[..., 2] - self.anchor_theta)
        fx = x_f / self.d_pos + self.n_pos / 2
        fy = y_f / self.d_pos + self.n_pos / 2
        ft = th_r / self.d_theta + self.n_theta // 2
        fv = (states[..., 3] - self.v_lo) / self.d_v - 0.5
        return fx, fy, ft, fv


@dataclass
class ValueGrid:
    values: np.ndarray           # (n_pos, n_pos, n_theta, n_v) float64
    spec: GridSpec
    t_index: int = 0

    def __post_init__(self):
        if self.values.shape != self.spec.shape:
            raise ValueError(f"values shape {self.values.shape} != spec {self.spec.shape}")


def zero_grid(spec: GridSpec, t_index: int = 0) -> ValueGrid:
    return ValueGrid(np.zeros(spec.shape), spec, t_index)


def _dim_terms(f, n):
    i0 = np.floor(f).astype(np.int64)
    w1 = f - i0
    in_span = (f >= -0.5) & (f <= n - 0.5)
    return i0, w1, in_span


def interpolate_many(grid: ValueGrid, states):
    """Multilinear interpolation of stored values at world states (..., 4).

    Factorized per dimension over the 16 neighboring bins; neighbors that
    fall off the table contribute zero, and any query outside a dimension's
    bin-edge span is zero outright. A query exactly at a bin center returns
    the stored value bit-for-bit (all residual weights are exactly 0).
    """
    spec = grid.spec
    fx, fy, ft, fv = spec.fractional_coords(states)
    ix, wx, okx = _dim_terms(fx, spec.n_pos)
    iy, wy, oky = _dim_terms(fy, spec.n_pos)
    it, wt, okt = _dim_terms(ft, spec.n_theta)
    iv, wv, okv = _dim_terms(fv, spec.n_v)
    in_span = okx & oky & okt & okv

    vals = grid.values
    out = np.zeros(np.asarray(fx).shape, dtype=np.float64)
    for bx in (0, 1):
        jx = ix + bx
        mx = (jx >= 0) & (jx < spec.n_pos)
        wxx = wx if bx else (1.0 - wx)
        for by in (0, 1):
            jy = iy + by
            my = mx & (jy >= 0) & (jy < spec.n_pos)
            wyy = wy if by else (1.0 - wy)
            for bt in (0, 1):
                jt = it + bt
                mt = my & (jt >= 0) & (jt < spec.n_theta)
                wtt = wt if bt else (1.0 - wt)
                for bv in (0, 1):
                    jv = iv + bv
                    m = mt & (jv >= 0) & (jv < spec.n_v)
                    wvv = wv if bv else (1.0 - wv)
                    w = wxx * wyy * wtt * wvv
                    if not np.any(m):
                        continue
                    gathered = vals[np.clip(jx, 0, spec.n_pos - 1),
                                    np.clip(jy, 0, spec.n_pos - 1),
                                    np.clip(jt, 0, spec.n_theta - 1),
                                    np.clip(jv, 0, spec.n_v - 1)]
                    out += np.where(m, w * gathered, 0.0)
    return np.where(in_span, out, 0.0)


def interpolate(grid: ValueGrid, state) -> float:
    """Scalar convenience wrapper over interpolate_many."""
    return float(interpolate_many(grid, np.asarray(state, dtype=np.float64)[None, :])[0])


# -- action set --------------------------------------------------------------


@dataclass(frozen=True)
class ActionGrid:
    m_steer: int = 9
    m_throttle: int = 3

    @property
    def n_actions(self):
        return self.m_steer * self.m_throttle + 1

    @property
    def brake_index(self):
        return self.m_steer * self.m_throttle

    def steer_values(self):
        return np.linspace(-1.0, 1.0, self.m_steer)

    def throttle_values(self):
        return np.linspace(0.0, 1.0, self.m_throttle)

    def tables(self):
        """(steer, throttle, brake) arrays over the flat action index.

        Non-brake index = steer_index * m_throttle + throttle_index; the
        final index is the brake action.
        """
        s = np.zeros(self.n_actions)
        t = np.zeros(self.n_actions)
        b = np.zeros(self.n_actions, dtype=bool)
        sv = self.steer_values()
        tv = self.throttle_values()
        for i in range(self.m_steer):
            for j in range(self.m_throttle):
                s[i * self.m_throttle + j] = sv[i]
                t[i * self.m_throttle + j] = tv[j]
        b[self.brake_index] = True
        return s, t, b

    def action(self, index: int) -> Action:
        s, t, b = self.tables()
        return Action(float(s[index]), float(t[index]), bool(b[index]))


@dataclass(frozen=True)
class PlanConfig:
    gamma: float = 0.9
    horizon: int = 5
    dt: float = DECISION_DT

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
