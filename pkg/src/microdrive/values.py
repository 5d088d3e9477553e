"""Tabular backward induction over the ego-anchored grid.

The expensive step is one Bellman backup: for every grid cell and action,
look up the interpolated next-step value after one model step and keep the
best action. Two structural facts make this fast without approximation:

* The one-step reward is action-independent (braking pays through a
  separate bonus channel that is excluded from accumulated value), so
  V_t = drive + gamma * max_a interp(V_{t+1}, step(cell, a)).

* The ego model is translation-equivariant in the anchor frame: for a
  fixed (orientation bin, speed bin, action) the displacement, next
  orientation, and next speed are the same for every position cell. Each
  of the 5*4*28 combos therefore reduces to a constant blend of two
  orientation x two speed planes followed by a constant bilinear shift,
  precomputed once into a plan that is reused across every backup that
  shares grid shape, model parameters, and step length.

Backups additionally restrict work to the bounding window of cells that can
possibly be nonzero (where reward is nonzero, or within one step's reach of
nonzero next values); cells outside it are exactly zero, so the windowed
sweep is not an approximation. The anchor cell's action values are computed
with the same arithmetic as the sweep, which makes label extraction agree
bit for bit with the stored table.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from microdrive.bicycle import BicycleParams, predict_array
from microdrive.grids import ActionGrid, GridSpec, PlanConfig, ValueGrid, interpolate_many, zero_grid
from microdrive.lane_map import Command, LaneMap, N_COMMANDS
from microdrive.logs import TrajectoryLog
from microdrive.reward import RewardConfig, RewardField


@dataclass
class BackupPlan:
    """Precomputed per-(theta, speed, action) transition geometry."""

    n_theta: int
    n_v: int
    n_actions: int
    pad: int
    nt: np.ndarray        # (C,) int64 count of theta/speed blend terms
    tki: np.ndarray       # (C, 4) int64 theta indices
    tmi: np.ndarray       # (C, 4) int64 speed indices
    tw: np.ndarray        # (C, 4) float64 blend weights
    i0: np.ndarray        # (C,) int64 integer row shift
    j0: np.ndarray        # (C,) int64 integer col shift
    cw: np.ndarray        # (C, 4) float64 corner weights (00, 01, 10, 11)
    vlo_i: np.ndarray     # (C,) int64 valid query cell ranges (inclusive)
    vhi_i: np.ndarray
    vlo_j: np.ndarray
    vhi_j: np.ndarray


def _axis_terms(f, n):
    """Blend terms along one non-position axis, zero-weight terms dropped."""
    if not (-0.5 <= f <= n - 0.5):
        return []
    i0 = int(np.floor(f))
    w = f - i0
    out = []
    if 0 <= i0 < n and (1.0 - w) > 0.0:
        out.append((i0, 1.0 - w))
    if 0 <= i0 + 1 < n and w > 0.0:
        out.append((i0 + 1, w))
    return out


def build_plan(params: BicycleParams, spec: GridSpec, actions: ActionGrid, dt: float) -> BackupPlan:
    K, M, A = spec.n_theta, spec.n_v, actions.n_actions
    C = K * M * A
    t_centers = spec.theta_centers()
    v_centers = spec.v_centers()
    sa, ta, ba = actions.tables()

    # relative dynamics: anchor at the origin with heading 0
    states = np.zeros((K, M, A, 4))
    states[..., 2] = t_centers[:, None, None]
    states[..., 3] = v_centers[None, :, None]
    acts = np.zeros((K, M, A, 3))
    acts[..., 0] = sa[None, None, :]
    acts[..., 1] = ta[None, None, :]
    acts[..., 2] = ba[None, None, :].astype(np.float64)
    nxt = predict_array(params, states.reshape(-1, 4), acts.reshape(-1, 3), dt).reshape(K, M, A, 4)

    plan = BackupPlan(
        n_theta=K, n_v=M, n_actions=A, pad=1,
        nt=np.zeros(C, dtype=np.int64),
        tki=np.zeros((C, 4), dtype=np.int64),
        tmi=np.zeros((C, 4), dtype=np.int64),
        tw=np.zeros((C, 4)),
        i0=np.zeros(C, dtype=np.int64),
        j0=np.zeros(C, dtype=np.int64),
        cw=np.zeros((C, 4)),
        vlo_i=np.zeros(C, dtype=np.int64),
        vhi_i=np.zeros(C, dtype=np.int64),
        vlo_j=np.zeros(C, dtype=np.int64),
        vhi_j=np.zeros(C, dtype=np.int64),
    )
    P = spec.n_pos
    for k in range(K):
        for m in range(M):
            for a in range(A):
                c = (k * M + m) * A + a
                dx, dy, th_n, v_n = nxt[k, m, a]
                ft = th_n / spec.d_theta + spec.n_theta // 2
                fv = (v_n - spec.v_lo) / spec.d_v - 0.5
                terms = [(tk, tm, wt * wv)
                         for tk, wt in _axis_terms(ft, K)
                         for tm, wv in _axis_terms(fv, M)]
                plan.nt[c] = len(terms)
                for t, (tk, tm, w) in enumerate(terms):
                    plan.tki[c, t] = tk
                    plan.tmi[c, t] = tm
                    plan.tw[c, t] = w
                dfx = dx / spec.d_pos
                dfy = dy / spec.d_pos
                i0 = int(np.floor(dfx))
                j0 = int(np.floor(dfy))
                wx = dfx - i0
                wy = dfy - j0
                plan.i0[c] = i0
                plan.j0[c] = j0
                plan.cw[c] = ((1 - wx) * (1 - wy), (1 - wx) * wy, wx * (1 - wy), wx * wy)
                plan.vlo_i[c] = int(np.ceil(-0.5 - dfx))
                plan.vhi_i[c] = int(np.floor(P - 0.5 - dfx))
                plan.vlo_j[c] = int(np.ceil(-0.5 - dfy))
                plan.vhi_j[c] = int(np.floor(P - 0.5 - dfy))
    plan.pad = int(max(np.max(np.abs(plan.i0)), np.max(np.abs(plan.j0)))) + 2
    return plan


@njit(cache=True)
def _sweep_cell(next_vals, c, r, q, nt, tki, tmi, tw, cw, i0, j0):
    """Gamma-free interpolated next value for one combo at one query cell.

    Matches the sweep kernel's arithmetic term for term so extracted values
    are bitwise equal to swept ones.
    """
    P = next_vals.shape[0]
    g = 0.0
    for corner in range(4):
        rr = r + i0[c] + (corner >> 1)
        cc = q + j0[c] + (corner & 1)
        T = 0.0
        if 0 <= rr < P and 0 <= cc < P:
            for t in range(nt[c]):
                T += tw[c, t] * next_vals[rr, cc, tki[c, t], tmi[c, t]]
        g += cw[c, corner] * T
    return g


@njit(cache=True)
def _backup_pair(next_vals, drive, gamma, k, m,
                 nt, tki, tmi, tw, i0, j0, cw, vlo_i, vhi_i, vlo_j, vhi_j,
                 pad, wi0, wi1, wj0, wj1, a_i, a_j, v_out, q_anchor):
    """One (orientation, speed) plane of the backup, window-restricted."""
    P = next_vals.shape[0]
    M = next_vals.shape[3]
    A = q_anchor.shape[2]
    base = (k * M + m) * A
    tmp = np.zeros((P + 2 * pad, P + 2 * pad))
    best = np.zeros((P, P))
    for a in range(A):
        c = base + a
        g = 0.0
        if nt[c] > 0 and vlo_i[c] <= a_i <= vhi_i[c] and vlo_j[c] <= a_j <= vhi_j[c]:
            g = _sweep_cell(next_vals, c, a_i, a_j, nt, tki, tmi, tw, cw, i0, j0)
        q_anchor[k, m, a] = drive[a_i, a_j, k, m] + gamma * g
        if nt[c] == 0:
            continue
        ilo = max(wi0, vlo_i[c])
        ihi = min(wi1, vhi_i[c])
        jlo = max(wj0, vlo_j[c])
        jhi = min(wj1, vhi_j[c])
        if ilo > ihi or jlo > jhi:
            continue
        rlo = max(ilo + i0[c], 0)
        rhi = min(ihi + i0[c] + 1, P - 1)
        clo = max(jlo + j0[c], 0)
        chi = min(jhi + j0[c] + 1, P - 1)
        n = nt[c]
        for r in range(rlo, rhi + 1):
            for q in range(clo, chi + 1):
                T = 0.0
                for t in range(n):
                    T += tw[c, t] * next_vals[r, q, tki[c, t], tmi[c, t]]
                tmp[r + pad, q + pad] = T
        for i in range(ilo, ihi + 1):
            ri = i + i0[c] + pad
            for j in range(jlo, jhi + 1):
                cj = j + j0[c] + pad
                g = cw[c, 0] * tmp[ri, cj]
                g += cw[c, 1] * tmp[ri, cj + 1]
                g += cw[c, 2] * tmp[ri + 1, cj]
                g += cw[c, 3] * tmp[ri + 1, cj + 1]
                cand = gamma * g
                if cand > best[i, j]:
                    best[i, j] = cand
    for i in range(wi0, wi1 + 1):
        for j in range(wj0, wj1 + 1):
            v_out[i, j, k, m] = drive[i, j, k, m] + best[i, j]


@njit(cache=True)
def _sweep_seq(next_vals, drive, gamma,
               nt, tki, tmi, tw, i0, j0, cw, vlo_i, vhi_i, vlo_j, vhi_j,
               pad, wi0, wi1, wj0, wj1, a_i, a_j, v_out, q_anchor):
    K = next_vals.shape[2]
    M = next_vals.shape[3]
    for km in range(K * M):
        _backup_pair(next_vals, drive, gamma, km // M, km % M,
                     nt, tki, tmi, tw, i0, j0, cw, vlo_i, vhi_i, vlo_j, vhi_j,
                     pad, wi0, wi1, wj0, wj1, a_i, a_j, v_out, q_anchor)


@njit(cache=True, parallel=True)
def _sweep_par(next_vals, drive, gamma,
               nt, tki, tmi, tw, i0, j0, cw, vlo_i, vhi_i, vlo_j, vhi_j,
               pad, wi0, wi1, wj0, wj1, a_i, a_j, v_out, q_anchor):
    K = next_vals.shape[2]
    M = next_vals.shape[3]
    for km in prange(K * M):
        _backup_pair(next_vals, drive, gamma, km // M, km % M,
                     nt, tki, tmi, tw, i0, j0, cw, vlo_i, vhi_i, vlo_j, vhi_j,
                     pad, wi0, wi1, wj0, wj1, a_i, a_j, v_out, q_anchor)


def _active_window(drive, next_vals, pad, n_pos):
    """Inclusive (wi0, wi1, wj0, wj1) bounding window; (0, -1, 0, -1) if empty."""

    def bbox(mask2d):
        rows = np.flatnonzero(mask2d.any(axis=1))
        cols = np.flatnonzero(mask2d.any(axis=0))
        if rows.size == 0:
            return None
        return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])

    b_r = bbox(drive.reshape(n_pos, n_pos, -1).max(axis=2) > 0.0)
    b_v = bbox(next_vals.reshape(n_pos, n_pos, -1).max(axis=2) > 0.0)
    if b_v is not None:
        b_v = (b_v[0] - pad, b_v[1] + pad, b_v[2] - pad, b_v[3] + pad)
    if b_r is None and b_v is None:
        return 0, -1, 0, -1
    if b_r is None:
        b = b_v
    elif b_v is None:
        b = b_r
    else:
        b = (min(b_r[0], b_v[0]), max(b_r[1], b_v[1]),
             min(b_r[2], b_v[2]), max(b_r[3], b_v[3]))
    return (max(b[0], 0), min(b[1], n_pos - 1), max(b[2], 0), min(b[3], n_pos - 1))


class AnchorMismatch(ValueError):
    pass


@dataclass
class BackupResult:
    """One backup step: the new value table plus a continuous Q view."""

    v: ValueGrid
    q_anchor: np.ndarray          # (n_theta, n_v, n_actions), no brake bonus
    next_grid: ValueGrid
    reward_field: RewardField
    snapshot: object
    params: BicycleParams
    actions: ActionGrid
    config: PlanConfig

    def q_at(self, states, include_bonus=True):
        """Continuous action values at world states (..., 4) -> (..., A).

        q(s, a) = drive(s) + gamma * interp(V_next, step(s, a)); the brake
        action's entry additionally earns the zone bonus when asked for.
        """
        states = np.asarray(states, dtype=np.float64)
        sa, ta, ba = self.actions.tables()
        acts = np.stack((sa, ta, ba.astype(np.float64)), axis=-1)
        tiled = np.broadcast_to(states[..., None, :], states.shape[:-1] + (self.actions.n_actions, 4))
        nxt = predict_array(self.params, tiled, acts, self.config.dt)
        interp = interpolate_many(self.next_grid, nxt)
        drive = self.reward_field.drive_at(self.snapshot, states)
        q = drive[..., None] + self.config.gamma * interp
        if include_bonus:
            bonus = self.reward_field.brake_bonus_at(self.snapshot, states)
            q[..., self.actions.brake_index] += bonus
        return q


def backup(next_grid: ValueGrid, snapshot, params: BicycleParams, actions: ActionGrid,
           reward_field: RewardField, config: PlanConfig,
           plan: BackupPlan | None = None, parallel: bool = False,
           windowed: bool = True) -> BackupResult:
    """One Bellman backup from V_{t+1} to V_t under a frozen snapshot."""
    spec = next_grid.spec
    if plan is None:
        plan = build_plan(params, spec, actions, config.dt)
    if (plan.n_theta, plan.n_v, plan.n_actions) != (spec.n_theta, spec.n_v, actions.n_actions):
        raise AnchorMismatch("plan does not match grid/action shape")
    drive = reward_field.drive_grid(snapshot, spec)
    next_vals = np.ascontiguousarray(next_grid.values)
    if windowed:
        wi0, wi1, wj0, wj1 = _active_window(drive, next_vals, plan.pad, spec.n_pos)
    else:
        wi0, wi1, wj0, wj1 = 0, spec.n_pos - 1, 0, spec.n_pos - 1
    v_out = np.zeros(spec.shape)
    q_anchor = np.zeros((spec.n_theta, spec.n_v, actions.n_actions))
    a_i, a_j, _ = spec.anchor_cell
    kernel = _sweep_par if parallel else _sweep_seq
    kernel(next_vals, drive, config.gamma,
           plan.nt, plan.tki, plan.tmi, plan.tw, plan.i0, plan.j0, plan.cw,
           plan.vlo_i, plan.vhi_i, plan.vlo_j, plan.vhi_j,
           plan.pad, wi0, wi1, wj0, wj1, a_i, a_j, v_out, q_anchor)
    v_t = ValueGrid(v_out, spec, next_grid.t_index - 1)
    return BackupResult(v=v_t, q_anchor=q_anchor, next_grid=next_grid,
                        reward_field=reward_field, snapshot=snapshot,
                        params=params, actions=actions, config=config)


def backup_reference(next_grid: ValueGrid, snapshot, params: BicycleParams,
                     actions: ActionGrid, reward_field: RewardField,
                     config: PlanConfig) -> np.ndarray:
    """Plain-numpy backup over all cells via the continuous interpolation
    path. Independent of the plan/shift machinery; used to cross-check it.
    """
    spec = next_grid.spec
    states = spec.cell_states_world().reshape(-1, 4)
    sa, ta, ba = actions.tables()
    best = np.zeros(states.shape[0])
    for a in range(actions.n_actions):
        act = np.array([sa[a], ta[a], float(ba[a])])
        nxt = predict_array(params, states, np.broadcast_to(act, states.shape[:-1] + (3,)), config.dt)
        np.maximum(best, interpolate_many(next_grid, nxt), out=best)
    drive = reward_field.drive_grid(snapshot, spec)
    return drive + config.gamma * best.reshape(spec.shape)


# -- trajectory labeling ------------------------------------------------------

DEFAULT_POSE_REPLICAS = (
    (float(np.deg2rad(30.0)), 0.0),
    (float(-np.deg2rad(30.0)), 0.0),
    (0.0, 0.5),
    (0.0, -0.5),
)


@dataclass
class FrameLabels:
    tick: int
    anchor: np.ndarray            # (4,) recorded x, y, theta, v
    q: np.ndarray                 # (n_commands, n_v, n_actions), bonus folded into brake
    replica_poses: np.ndarray     # (R, 3)
    replica_q: np.ndarray         # (R, n_commands, n_v, n_actions)


def replica_pose(anchor, yaw_off: float, lat_off: float):
    x, y, th = anchor[0], anchor[1], anchor[2]
    return np.array([x - np.sin(th) * lat_off, y + np.cos(th) * lat_off, th + yaw_off])


def label_trajectory(traj: TrajectoryLog, lane_map: LaneMap, params: BicycleParams,
                     actions: ActionGrid | None = None, config: PlanConfig | None = None,
                     reward_config: RewardConfig | None = None,
                     pose_replicas=DEFAULT_POSE_REPLICAS,
                     grid_kwargs: dict | None = None,
                     parallel: bool = False, frames=None):
    """Yield dense action-value labels for each decision frame of a log.

    For every frame the grid is anchored at the recorded pose, the terminal
    value is zero at the end of the horizon (shortened near the end of the
    episode), and one backup runs per remaining snapshot, per command. The
    anchor's Q row comes straight out of the final backup's table; replica
    poses are evaluated through the continuous Q path against the same
    V_{t+1}.
    """
    if len(traj) < 1:
        raise ValueError("cannot label an empty trajectory")
    actions = actions or ActionGrid()
    config = config or PlanConfig()
    rcfg = reward_config or RewardConfig()
    plan = None
    replicas = np.array(pose_replicas, dtype=np.float64).reshape(-1, 2)
    frame_iter = range(len(traj)) if frames is None else frames
    for t in frame_iter:
        anchor = traj.ego[t].copy()
        spec = GridSpec(anchor_x=float(anchor[0]), anchor_y=float(anchor[1]),
                        anchor_theta=float(anchor[2]), **(grid_kwargs or {}))
        if plan is None:
            plan = build_plan(params, spec, actions, config.dt)
        h_eff = min(config.horizon, len(traj) - t)
        snap_t = traj.snapshots[t]
        q = np.zeros((N_COMMANDS, spec.n_v, actions.n_actions))
        rq = np.zeros((len(replicas), N_COMMANDS, spec.n_v, actions.n_actions))
        rposes = np.stack([replica_pose(anchor, yo, lo) for yo, lo in replicas]) \
            if len(replicas) else np.zeros((0, 3))
        for ci in range(N_COMMANDS):
            chain = lane_map.build_chain(float(anchor[0]), float(anchor[1]),
                                         float(anchor[2]), Command(ci))
            rfield = RewardField(lane_map, chain, rcfg)
            grid = zero_grid(spec, t_index=t + h_eff)
            result = None
            for k in range(h_eff - 1, -1, -1):
                result = backup(grid, traj.snapshots[t + k], params, actions,
                                rfield, config, plan=plan, parallel=parallel)
                grid = result.v
            k_anchor = spec.anchor_cell[2]
            q[ci] = result.q_anchor[k_anchor]
            astate = np.array([anchor[0], anchor[1], anchor[2], 0.0])
            bonus = float(rfield.brake_bonus_at(snap_t, astate[None, :])[0])
            q[ci, :, actions.brake_index] += bonus
            if len(replicas):
                v_centers = spec.v_centers()
                states = np.zeros((len(replicas), spec.n_v, 4))
                states[..., 0] = rposes[:, None, 0]
                states[..., 1] = rposes[:, None, 1]
                states[..., 2] = rposes[:, None, 2]
                states[..., 3] = v_centers[None, :]
                rq[:, ci] = result.q_at(states, include_bonus=True)
        yield FrameLabels(tick=int(traj.ticks[t]), anchor=anchor, q=q,
                          replica_poses=rposes, replica_q=rq)


# -- label file ---------------------------------------------------------------

Q_MAGIC = b"WORQ1\n"


class QLabelWriter:
    def __init__(self, path, spec_like: GridSpec, actions: ActionGrid,
                 config: PlanConfig, pose_replicas=DEFAULT_POSE_REPLICAS):
        self.path = path
        self._f = open(path, "wb")
        reps = np.array(pose_replicas, dtype=np.float64).reshape(-1, 2)
        self._f.write(Q_MAGIC)
        self._f.write(struct.pack("<HHHdHdHdd", N_COMMANDS, actions.n_actions,
                                  spec_like.n_pos, spec_like.d_pos,
                                  spec_like.n_theta, spec_like.d_theta,
                                  spec_like.n_v, spec_like.d_v, spec_like.v_lo))
        self._f.write(struct.pack("<dHB", config.gamma, config.horizon, len(reps)))
        self._f.write(reps.astype("<f8").tobytes())
        self.n_frames = 0

    def append(self, labels: FrameLabels):
        self._f.write(struct.pack("<Q", labels.tick))
        self._f.write(labels.anchor.astype("<f8").tobytes())
        self._f.write(labels.q.astype("<f4").tobytes())
        self._f.write(labels.replica_q.astype("<f4").tobytes())
        self.n_frames += 1

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class QLabelFile:
    n_commands: int
    n_actions: int
    grid_kwargs: dict
    gamma: float
    horizon: int
    replica_offsets: np.ndarray   # (R, 2) yaw, lateral
    ticks: np.ndarray             # (F,)
    anchors: np.ndarray           # (F, 4)
    q: np.ndarray                 # (F, n_commands, n_v, n_actions) float32
    replica_q: np.ndarray         # (F, R, n_commands, n_v, n_actions)

    def __len__(self):
        return len(self.ticks)

    def replica_poses(self, frame):
        return np.stack([replica_pose(self.anchors[frame], yo, lo)
                         for yo, lo in self.replica_offsets]) \
            if len(self.replica_offsets) else np.zeros((0, 3))


def read_qlabels(path) -> QLabelFile:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(Q_MAGIC):
        raise ValueError(f"{path}: not a q-label file")
    off = len(Q_MAGIC)
    n_cmd, n_act, n_pos, d_pos, n_theta, d_theta, n_v, d_v, v_lo = struct.unpack_from("<HHHdHdHdd", data, off)
    off += struct.calcsize("<HHHdHdHdd")
    gamma, horizon, n_rep = struct.unpack_from("<dHB", data, off)
    off += struct.calcsize("<dHB")
    reps = np.frombuffer(data, dtype="<f8", count=n_rep * 2, offset=off).reshape(n_rep, 2).copy()
    off += n_rep * 16
    q_count = n_cmd * n_v * n_act
    frame_bytes = 8 + 32 + 4 * q_count + 4 * n_rep * q_count
    ticks, anchors, qs, rqs = [], [], [], []
    while off < len(data):
        if off + frame_bytes > len(data):
            raise ValueError(f"{path}: truncated frame at byte {off}")
        (tick,) = struct.unpack_from("<Q", data, off)
        anchor = np.frombuffer(data, dtype="<f8", count=4, offset=off + 8)
        q = np.frombuffer(data, dtype="<f4", count=q_count, offset=off + 40)
        rq = np.frombuffer(data, dtype="<f4", count=n_rep * q_count, offset=off + 40 + 4 * q_count)
        ticks.append(tick)
        anchors.append(anchor)
        qs.append(q.reshape(n_cmd, n_v, n_act))
        rqs.append(rq.reshape(n_rep, n_cmd, n_v, n_act))
        off += frame_bytes
    return QLabelFile(
        n_commands=n_cmd, n_actions=n_act,
        grid_kwargs=dict(n_pos=n_pos, d_pos=d_pos, n_theta=n_theta,
                         d_theta=d_theta, n_v=n_v, d_v=d_v, v_lo=v_lo),
        gamma=gamma, horizon=horizon, replica_offsets=reps,
        ticks=np.array(ticks, dtype=np.uint64),
        anchors=np.array(anchors),
        q=np.array(qs, dtype=np.float32),
        replica_q=np.array(rqs, dtype=np.float32),
    )


def render_value_map(grid: ValueGrid, out_path):
    """4 x 5 tile sheet (speed rows, orientation columns), min-max scaled.

    The scale is written to <out_path>.scale.txt so pixel values stay
    interpretable.
    """
    from PIL import Image

    spec = grid.spec
    vals = grid.values
    lo = float(vals.min())
    hi = float(vals.max())
    span = hi - lo
    P = spec.n_pos
    sheet = np.zeros((spec.n_v * P, spec.n_theta * P), dtype=np.uint8)
    for m in range(spec.n_v):
        for k in range(spec.n_theta):
            tile = vals[:, :, k, m]
            if span > 0:
                norm = (tile - lo) / span
            else:
                norm = np.zeros_like(tile)
            sheet[m * P:(m + 1) * P, k * P:(k + 1) * P] = np.round(norm * 255).astype(np.uint8)
    Image.fromarray(sheet, mode="L").save(out_path)
    with open(f"{out_path}.scale.txt", "w") as f:
        f.write(f"min {lo!r}\nmax {hi!r}\nrows speed_bins {spec.n_v}\ncols orientation_bins {spec.n_theta}\n")
