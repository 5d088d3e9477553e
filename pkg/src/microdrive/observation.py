"""Ego-centric binary rasters used as the policy's visual input.

Each observation is a (10, 64, 64) uint8 grid at 0.25 m per cell, so the
window spans 16 m on a side. The ego sits at the shared corner of the four
central cells; row index runs from +7.875 m ahead (row 0) to -7.875 m behind,
column index from +7.875 m left (col 0) to -7.875 m right, so printing a
channel shows the scene with the ego pointing up.

Channels:
    0        drivable area (within half-width of any lane centerline)
    1..6     target chain per command, in command order
    7        other vehicles (cell center inside a vehicle box)
    8        stop lines (0.5 m band across the owning lane)
    9        active stop zones: 8 m of lane behind a stop line whose
             light is not green

All channels are 0/1. Cell membership is evaluated at cell centers.
"""
from __future__ import annotations

import numpy as np

from microdrive.lane_map import Command, LaneMap, LightPhase, N_COMMANDS
from microdrive.world import EgoState, WorldSnapshot

OBS_CHANNELS = 10
OBS_SIZE = 64
OBS_CELL = 0.25
_HALF_SPAN = OBS_SIZE * OBS_CELL / 2.0        # 8 m
STOP_BAND_HALF = 0.25
STOP_ZONE_LENGTH = 8.0

# offsets of cell centers along each ego-frame axis, row/col index order
_AXIS = (OBS_SIZE / 2 - 0.5 - np.arange(OBS_SIZE)) * OBS_CELL


def cell_centers_ego():
    """(64*64, 2) ego-frame coordinates of all cell centers, row-major."""
    fwd = np.repeat(_AXIS, OBS_SIZE)
    left = np.tile(_AXIS, OBS_SIZE)
    return np.column_stack((fwd, left))


_CENTERS = cell_centers_ego()


def _ribbon_mask(line, px, py, half_width, s_lo=None, s_hi=None):
    """Cells within half_width of a polyline, optionally banded in arc length.

    Distance is to the nearest point on the polyline (not the signed offset),
    so coverage stops cleanly at the ends. Segments whose padded bounding box
    misses the query window are skipped up front; chains extend well past the
    16 m window so this prunes most of their segments.
    """
    a = line.points[:-1]
    b = line.points[1:]
    pad = half_width + 1e-9
    x_lo, x_hi = px.min() - pad, px.max() + pad
    y_lo, y_hi = py.min() - pad, py.max() + pad
    keep = ((np.minimum(a[:, 0], b[:, 0]) <= x_hi) & (np.maximum(a[:, 0], b[:, 0]) >= x_lo)
            & (np.minimum(a[:, 1], b[:, 1]) <= y_hi) & (np.maximum(a[:, 1], b[:, 1]) >= y_lo))
    if s_lo is not None:
        keep &= (line.cum_s[:-1] <= s_hi) & (line.cum_s[:-1] + line.seg_len >= s_lo)
    mask = np.zeros(px.shape, dtype=bool)
    if not keep.any():
        return mask
    a = a[keep]
    d = line.seg_dir[keep]
    seg_len = line.seg_len[keep]
    rx = px[:, None] - a[None, :, 0]
    ry = py[:, None] - a[None, :, 1]
    t = np.clip(rx * d[None, :, 0] + ry * d[None, :, 1], 0.0, seg_len[None, :])
    dist2 = (rx - t * d[None, :, 0]) ** 2 + (ry - t * d[None, :, 1]) ** 2
    if s_lo is None:
        return dist2.min(axis=1) <= half_width * half_width
    best = np.argmin(dist2, axis=1)
    rows = np.arange(len(px))
    s = line.cum_s[:-1][keep][best] + t[rows, best]
    mask = dist2[rows, best] <= half_width * half_width
    return mask & (s >= s_lo) & (s <= s_hi)


def observe(lane_map: LaneMap, snapshot: WorldSnapshot, ego: EgoState, chains=None):
    """Render the 10-channel observation for one ego pose and world state.

    chains: optional precomputed list of N_COMMANDS target chains for this
    pose (saves rebuilding them when the caller already has them).
    """
    ct, st = np.cos(ego.theta), np.sin(ego.theta)
    px = ego.x + _CENTERS[:, 0] * ct - _CENTERS[:, 1] * st
    py = ego.y + _CENTERS[:, 0] * st + _CENTERS[:, 1] * ct
    obs = np.zeros((OBS_CHANNELS, OBS_SIZE * OBS_SIZE), dtype=np.uint8)

    reach = _HALF_SPAN * np.sqrt(2.0) + 0.5
    near_ids = set(lane_map.lanes_near(ego.x, ego.y, reach))

    for lid in near_ids:
        lane = lane_map.lanes[lid]
        obs[0] |= _ribbon_mask(lane.line, px, py, lane.width / 2.0)

    if chains is None:
        chains = [lane_map.build_chain(ego.x, ego.y, ego.theta, Command(c)) for c in range(N_COMMANDS)]
    for c, chain in enumerate(chains):
        obs[1 + c] |= _ribbon_mask(chain.line, px, py, chain.width / 2.0)

    for npc in snapshot.npcs:
        if (npc.x - ego.x) ** 2 + (npc.y - ego.y) ** 2 > (reach + 3.0) ** 2:
            continue
        cn, sn = np.cos(npc.theta), np.sin(npc.theta)
        dx = px - npc.x
        dy = py - npc.y
        lon = dx * cn + dy * sn
        lat = -dx * sn + dy * cn
        obs[7] |= (np.abs(lon) <= npc.half_len) & (np.abs(lat) <= npc.half_wid)

    for sl in lane_map.stop_lines:
        if sl.lane_id not in near_ids:
            continue
        lane = lane_map.lanes[sl.lane_id]
        obs[8] |= _ribbon_mask(lane.line, px, py, lane.width / 2.0,
                               sl.s - STOP_BAND_HALF, sl.s + STOP_BAND_HALF)
        if snapshot.light_phases.get(sl.light_id, LightPhase.GREEN) != LightPhase.GREEN:
            obs[9] |= _ribbon_mask(lane.line, px, py, lane.width / 2.0,
                                   sl.s - STOP_ZONE_LENGTH, sl.s)

    return obs.reshape(OBS_CHANNELS, OBS_SIZE, OBS_SIZE)


def render_ascii(channel):
    """Debug view of one channel ('#' filled, '.' empty)."""
    return "\n".join("".join("#" if v else "." for v in row) for row in channel)
