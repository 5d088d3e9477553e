"""Planar geometry helpers: angles, frames, and arc-length polylines.

Everything here is plain numpy so the hot callers (reward rasterization,
chain projection) can stay vectorized over grids of query points.
"""
from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]. Works elementwise on arrays."""
    w = np.remainder(np.asarray(theta) + np.pi, TWO_PI)
    # remainder lands in [0, 2pi); 0 maps to -pi, so fold it back to +pi.
    w = np.where(w == 0.0, TWO_PI, w)
    out = w - np.pi
    if np.ndim(theta) == 0:
        return float(out)
    return out


def rotate_xy(x, y, angle):
    """Rotate points by `angle` about the origin."""
    c, s = np.cos(angle), np.sin(angle)
    return c * x - s * y, s * x + c * y


def world_to_frame(x, y, fx, fy, ftheta):
    """Express world points in the frame at (fx, fy) with heading ftheta.

    Frame +x points along the heading, +y points left of it.
    """
    return rotate_xy(np.asarray(x) - fx, np.asarray(y) - fy, -ftheta)


def frame_to_world(u, v, fx, fy, ftheta):
    """Inverse of world_to_frame."""
    x, y = rotate_xy(u, v, ftheta)
    return x + fx, y + fy


TANGENT_BLEND_M = 2.0


class Polyline:
    """Arc-length parameterized polyline with smoothed vertex tangents.

    Tangents are averaged at interior vertices and blended into the segment
    direction over a short window on each side, which keeps heading-error
    fields continuous across the vertices of sampled arcs without letting a
    distant bend tilt the heading along a long straight segment.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("polyline needs at least 2 points of shape (n, 2)")
        self.points = pts
        seg = pts[1:] - pts[:-1]
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("polyline has zero-length segment")
        self.seg_len = seg_len
        self.cum_s = np.concatenate(([0.0], np.cumsum(seg_len)))
        self.length = float(self.cum_s[-1])
        self.seg_dir = seg / seg_len[:, None]
        # Per-vertex unit tangents: endpoint tangents copy the adjacent
        # segment, interior ones bisect the neighbors.
        vt = np.empty_like(pts)
        vt[0] = self.seg_dir[0]
        vt[-1] = self.seg_dir[-1]
        if len(pts) > 2:
            mid = self.seg_dir[:-1] + self.seg_dir[1:]
            norm = np.hypot(mid[:, 0], mid[:, 1])
            norm = np.where(norm < 1e-12, 1.0, norm)
            vt[1:-1] = mid / norm[:, None]
        self.vertex_tangent = vt

    def point_at(self, s):
        """Position at arc length s (clamped to [0, length])."""
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.cum_s, s, side="right") - 1, 0, len(self.seg_len) - 1)
        t = (s - self.cum_s[idx]) / self.seg_len[idx]
        p = self.points[idx] + self.seg_dir[idx] * ((t * self.seg_len[idx])[..., None])
        return p

    def heading_at(self, s):
        """Tangent heading (radians) at arc length s.

        Equals the segment direction except within TANGENT_BLEND_M of a
        vertex (half the segment length if shorter), where it blends
        linearly into the averaged vertex tangent. Continuous everywhere;
        exactly the segment direction along the interior of long segments.
        """
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.cum_s, s, side="right") - 1, 0, len(self.seg_len) - 1)
        d0 = s - self.cum_s[idx]
        d1 = self.seg_len[idx] - d0
        w = np.minimum(TANGENT_BLEND_M, self.seg_len[idx] / 2.0)
        w0 = np.clip(1.0 - d0 / w, 0.0, 1.0)[..., None]
        w1 = np.clip(1.0 - d1 / w, 0.0, 1.0)[..., None]
        base = self.seg_dir[idx]
        tan = base + w0 * (self.vertex_tangent[idx] - base) + w1 * (self.vertex_tangent[idx + 1] - base)
        return np.arctan2(tan[..., 1], tan[..., 0])

    def project(self, x, y):
        """Project points onto the polyline.

        Returns (s, signed_offset, tangent_heading) arrays. Offset is
        positive left of the direction of travel.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        shape = np.broadcast(x, y).shape
        px = np.broadcast_to(x, shape).reshape(-1)
        py = np.broadcast_to(y, shape).reshape(-1)
        a = self.points[:-1]
        d = self.seg_dir
        # (nq, nseg) projections of each query on each segment
        rx = px[:, None] - a[None, :, 0]
        ry = py[:, None] - a[None, :, 1]
        t = rx * d[None, :, 0] + ry * d[None, :, 1]
        t = np.clip(t, 0.0, self.seg_len[None, :])
        cx = a[None, :, 0] + t * d[None, :, 0]
        cy = a[None, :, 1] + t * d[None, :, 1]
        dist2 = (px[:, None] - cx) ** 2 + (py[:, None] - cy) ** 2
        best = np.argmin(dist2, axis=1)
        rows = np.arange(len(px))
        s = self.cum_s[best] + t[rows, best]
        heading = self.heading_at(s)
        tx, ty = np.cos(heading), np.sin(heading)
        ox = px - cx[rows, best]
        oy = py - cy[rows, best]
        offset = tx * oy - ty * ox  # z of tangent x delta: positive = left
        return s.reshape(shape), offset.reshape(shape), heading.reshape(shape)

    def bbox(self, pad=0.0):
        lo = self.points.min(axis=0) - pad
        hi = self.points.max(axis=0) + pad
        return lo[0], lo[1], hi[0], hi[1]


def sample_arc(p0, t0, p1, t1, n=14):
    """Sample a cubic Bezier joining pose (p0, heading t0) to (p1, heading t1).

    Used for intersection turn connectors. Control arms are 40% of the chord
    which gives close-to-circular quarter turns.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    chord = np.hypot(*(p1 - p0))
    arm = 0.4 * chord
    c0 = p0 + arm * np.array([np.cos(t0), np.sin(t0)])
    c1 = p1 - arm * np.array([np.cos(t1), np.sin(t1)])
    u = np.linspace(0.0, 1.0, n)[:, None]
    pts = ((1 - u) ** 3) * p0 + 3 * ((1 - u) ** 2) * u * c0 + 3 * (1 - u) * (u ** 2) * c1 + (u ** 3) * p1
    return pts


def obb_overlap_depth(cx0, cy0, th0, hx0, hy0, cx1, cy1, th1, hx1, hy1):
    """Penetration depth of two oriented boxes (0.0 when separated).

    Separating-axis test over the four face normals; the depth is the
    smallest overlap across axes, which is the usual minimum translation
    distance for box-box contact.
    """
    axes = []
    for th in (th0, th1):
        c, s = np.cos(th), np.sin(th)
        axes.append((c, s))
        axes.append((-s, c))
    dx, dy = cx1 - cx0, cy1 - cy0
    ext0 = (hx0, hy0)
    ext1 = (hx1, hy1)
    min_overlap = np.inf
    for ax, ay in axes:
        c0, s0 = np.cos(th0), np.sin(th0)
        c1, s1 = np.cos(th1), np.sin(th1)
        r0 = ext0[0] * abs(ax * c0 + ay * s0) + ext0[1] * abs(-ax * s0 + ay * c0)
        r1 = ext1[0] * abs(ax * c1 + ay * s1) + ext1[1] * abs(-ax * s1 + ay * c1)
        dist = abs(ax * dx + ay * dy)
        overlap = r0 + r1 - dist
        if overlap <= 0.0:
            return 0.0
        min_overlap = min(min_overlap, overlap)
    return float(min_overlap)
