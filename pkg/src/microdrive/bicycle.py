"""Parametric kinematic ego model and its fitting routine.

One explicit Euler step per control decision (0.25 s):

    x'     = x + dt * v * cos(theta + beta)
    y'     = y + dt * v * sin(theta + beta)
    theta' = theta + dt * (v / rear_base) * sin(beta)
    v'     = max(0, v + dt * a)
    beta   = atan(rear_base / (front_base + rear_base) * tan(phi))

where phi is a learned piecewise-linear map from the steering command and
the acceleration is ``c1 * throttle + c2 - c3 * v`` while driving or a
constant deceleration while braking (brake zeroes steering and throttle).

Fitting minimizes the L1 mismatch of rolled-out positions and heading
cos/sin over multi-step windows; speed enters only through the dynamics, not
the loss, which lets the fitted speed state absorb integrator-scale bias in
the logged motion. Gradients are accumulated analytically with forward-mode
jacobians through the rollout; the optimizer is plain SGD with gradient-norm
clipping and an optional step decay.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from microdrive.world import Action, EgoState, DECISION_DT

N_STEER_KNOTS = 9
STEER_KNOT_POS = np.linspace(-1.0, 1.0, N_STEER_KNOTS)
N_PARAMS = 2 + N_STEER_KNOTS + 4


@dataclass
class BicycleParams:
    front_base: float
    rear_base: float
    steer_knots: np.ndarray     # wheel angle (rad) at steering -1..1, 9 knots
    throttle_gain: float        # c1
    throttle_bias: float        # c2
    drag: float                 # c3, per-second speed decay feeding accel
    brake_decel: float          # constant deceleration while braking

    def __post_init__(self):
        self.steer_knots = np.asarray(self.steer_knots, dtype=np.float64)
        if self.steer_knots.shape != (N_STEER_KNOTS,):
            raise ValueError(f"steer_knots must have shape ({N_STEER_KNOTS},)")
        if self.front_base <= 0 or self.rear_base <= 0:
            raise ValueError("wheelbase components must be positive")

    def to_vector(self):
        return np.concatenate((
            [self.front_base, self.rear_base],
            self.steer_knots,
            [self.throttle_gain, self.throttle_bias, self.drag, self.brake_decel],
        ))

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(
            front_base=float(vec[0]),
            rear_base=float(vec[1]),
            steer_knots=vec[2:2 + N_STEER_KNOTS].copy(),
            throttle_gain=float(vec[2 + N_STEER_KNOTS]),
            throttle_bias=float(vec[3 + N_STEER_KNOTS]),
            drag=float(vec[4 + N_STEER_KNOTS]),
            brake_decel=float(vec[5 + N_STEER_KNOTS]),
        )


def default_init() -> BicycleParams:
    """Generic starting point for fitting: linear steering, mild drag."""
    return BicycleParams(
        front_base=1.3,
        rear_base=1.3,
        steer_knots=0.4 * STEER_KNOT_POS,
        throttle_gain=2.5,
        throttle_bias=0.0,
        drag=0.2,
        brake_decel=4.0,
    )


def wheel_angle(params: BicycleParams, steer):
    """Piecewise-linear steering-command to wheel-angle map."""
    s = np.clip(np.asarray(steer, dtype=np.float64), -1.0, 1.0)
    u = (s + 1.0) / (STEER_KNOT_POS[1] - STEER_KNOT_POS[0])
    seg = np.clip(np.floor(u).astype(np.int64), 0, N_STEER_KNOTS - 2)
    w = u - seg
    return (1.0 - w) * params.steer_knots[seg] + w * params.steer_knots[seg + 1]


def predict_array(params: BicycleParams, states, actions, dt: float = DECISION_DT):
    """Vectorized one-step prediction.

    states: (..., 4) as (x, y, theta, v); actions: (..., 3) as
    (steer, throttle, brake in {0,1}). Heading is left unwrapped.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    x, y, th, v = states[..., 0], states[..., 1], states[..., 2], states[..., 3]
    steer, thr, brk = actions[..., 0], actions[..., 1], actions[..., 2]
    braking = brk > 0.5
    phi = np.where(braking, 0.0, wheel_angle(params, steer))
    g = params.rear_base / (params.front_base + params.rear_base)
    beta = np.arctan(g * np.tan(phi))
    accel = np.where(
        braking,
        -params.brake_decel,
        params.throttle_gain * thr + params.throttle_bias - params.drag * v,
    )
    nxt = np.empty_like(states)
    nxt[..., 0] = x + dt * v * np.cos(th + beta)
    nxt[..., 1] = y + dt * v * np.sin(th + beta)
    nxt[..., 2] = th + dt * (v / params.rear_base) * np.sin(beta)
    nxt[..., 3] = np.maximum(0.0, v + dt * accel)
    return nxt


def predict(params: BicycleParams, state: EgoState, action: Action, dt: float = DECISION_DT) -> EgoState:
    out = predict_array(params, state.as_array(), np.array([action.steer, action.throttle, float(action.brake)]), dt)
    return EgoState(float(out[0]), float(out[1]), float(out[2]), float(out[3]))


def rollout_array(params: BicycleParams, state0, actions, dt: float = DECISION_DT):
    """Autoregressive rollout: states after each of the T actions.

    state0: (..., 4); actions: (..., T, 3); returns (..., T, 4).
    """
    state0 = np.asarray(state0, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    T = actions.shape[-2]
    out = np.empty(state0.shape[:-1] + (T, 4), dtype=np.float64)
    cur = state0
    for t in range(T):
        cur = predict_array(params, cur, actions[..., t, :], dt)
        out[..., t, :] = cur
    return out


def rollout(params: BicycleParams, state: EgoState, actions, dt: float = DECISION_DT):
    arr = np.array([[a.steer, a.throttle, float(a.brake)] for a in actions])
    states = rollout_array(params, state.as_array(), arr, dt)
    return [EgoState(*map(float, s)) for s in states]


# -- analytic loss gradient -------------------------------------------------


def _steer_interp_terms(steer):
    s = np.clip(np.asarray(steer, dtype=np.float64), -1.0, 1.0)
    u = (s + 1.0) / (STEER_KNOT_POS[1] - STEER_KNOT_POS[0])
    seg = np.clip(np.floor(u).astype(np.int64), 0, N_STEER_KNOTS - 2)
    w = u - seg
    return seg, w


def loss_and_grad(param_vec, state0, actions, targets, dt: float = DECISION_DT):
    """L1 rollout loss and its gradient w.r.t. the packed parameter vector.

    state0: (B, 4); actions: (B, T, 3); targets: (B, T, 4). The loss sums
    |dx| + |dy| + |d cos(theta)| + |d sin(theta)| over steps, averaged over
    the batch. Speed has no loss term. Returns (loss, grad (P,)).
    """
    params = BicycleParams.from_vector(param_vec)
    state0 = np.asarray(state0, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    B, T, _ = actions.shape
    P = N_PARAMS
    fb, rb = params.front_base, params.rear_base
    wb = fb + rb
    g = rb / wb
    dg_dfb = -rb / wb ** 2
    dg_drb = fb / wb ** 2

    cur = state0.copy()
    J = np.zeros((B, 4, P))
    loss = 0.0
    grad = np.zeros(P)

    for t in range(T):
        steer, thr, brk = actions[:, t, 0], actions[:, t, 1], actions[:, t, 2]
        braking = brk > 0.5
        seg, w = _steer_interp_terms(steer)
        phi = (1.0 - w) * params.steer_knots[seg] + w * params.steer_knots[seg + 1]
        phi = np.where(braking, 0.0, phi)
        tan_phi = np.tan(phi)
        u = g * tan_phi
        beta = np.arctan(u)
        dbeta_du = 1.0 / (1.0 + u * u)
        sec2 = 1.0 + tan_phi * tan_phi
        x, y, th, v = cur[:, 0], cur[:, 1], cur[:, 2], cur[:, 3]
        cb = np.cos(th + beta)
        sb = np.sin(th + beta)
        sin_beta = np.sin(beta)
        cos_beta = np.cos(beta)
        accel = np.where(braking, -params.brake_decel, params.throttle_gain * thr + params.throttle_bias - params.drag * v)
        v_next_raw = v + dt * accel
        alive = v_next_raw > 0.0

        # params -> beta (per sample, sparse over knots)
        dphi = np.zeros((B, P))
        rows = np.arange(B)
        live = ~braking
        dphi[rows[live], 2 + seg[live]] = 1.0 - w[live]
        dphi[rows[live], 2 + seg[live] + 1] = w[live]
        dbeta = np.zeros((B, P))
        dbeta[:, 0] = dbeta_du * tan_phi * dg_dfb
        dbeta[:, 1] = dbeta_du * tan_phi * dg_drb
        dbeta[braking, 0] = 0.0
        dbeta[braking, 1] = 0.0
        dbeta += dbeta_du[:, None] * g * sec2[:, None] * dphi

        # params -> accel
        daccel = np.zeros((B, P))
        iK = 2 + N_STEER_KNOTS
        daccel[live, iK + 0] = thr[live]
        daccel[live, iK + 1] = 1.0
        daccel[live, iK + 2] = -v[live]
        daccel[braking, iK + 3] = -1.0

        # B_t: direct parameter sensitivity of the step outputs
        Bt = np.zeros((B, 4, P))
        Bt[:, 0, :] = (-dt * v * sb)[:, None] * dbeta
        Bt[:, 1, :] = (dt * v * cb)[:, None] * dbeta
        Bt[:, 2, :] = (dt * v / rb * cos_beta)[:, None] * dbeta
        Bt[:, 2, 1] += -dt * v * sin_beta / rb ** 2
        Bt[:, 3, :] = dt * alive[:, None] * daccel

        # A_t: state jacobian (x,y rows depend on theta and v; theta on v)
        AJ = np.empty_like(J)
        AJ[:, 0, :] = J[:, 0, :] + (-dt * v * sb)[:, None] * J[:, 2, :] + (dt * cb)[:, None] * J[:, 3, :]
        AJ[:, 1, :] = J[:, 1, :] + (dt * v * cb)[:, None] * J[:, 2, :] + (dt * sb)[:, None] * J[:, 3, :]
        AJ[:, 2, :] = J[:, 2, :] + (dt * sin_beta / rb)[:, None] * J[:, 3, :]
        dv_dv = alive * np.where(braking, 1.0, 1.0 - dt * params.drag)
        AJ[:, 3, :] = dv_dv[:, None] * J[:, 3, :]
        J = AJ + Bt

        nxt = np.empty_like(cur)
        nxt[:, 0] = x + dt * v * cb
        nxt[:, 1] = y + dt * v * sb
        nxt[:, 2] = th + dt * (v / rb) * sin_beta
        nxt[:, 3] = np.maximum(0.0, v_next_raw)
        cur = nxt

        ex = cur[:, 0] - targets[:, t, 0]
        ey = cur[:, 1] - targets[:, t, 1]
        ec = np.cos(cur[:, 2]) - np.cos(targets[:, t, 2])
        es = np.sin(cur[:, 2]) - np.sin(targets[:, t, 2])
        loss += np.sum(np.abs(ex) + np.abs(ey) + np.abs(ec) + np.abs(es))
        dL = np.zeros((B, 4))
        dL[:, 0] = np.sign(ex)
        dL[:, 1] = np.sign(ey)
        dL[:, 2] = -np.sin(cur[:, 2]) * np.sign(ec) + np.cos(cur[:, 2]) * np.sign(es)
        grad += np.einsum("bi,bip->p", dL, J)

    return loss / B, grad / B


def position_errors(params: BicycleParams, state0, actions, targets, dt: float = DECISION_DT):
    """Mean absolute rolled-out position error at each horizon step."""
    pred = rollout_array(params, state0, actions, dt)
    err = np.hypot(pred[..., 0] - targets[..., 0], pred[..., 1] - targets[..., 1])
    return err.mean(axis=0)


# -- fitting ---------------------------------------------------------------


@dataclass
class FitConfig:
    horizon: int = 10
    lr: float = 1e-2
    batch_size: int = 128
    epochs: int = 60
    clip_norm: float = 10.0
    odd_symmetric: bool = True
    seed: int = 0
    # step decay keeps plain SGD but settles the tail of the run
    decay_at: tuple = (0.6, 0.85)
    decay_factor: float = 0.3


@dataclass
class FitReport:
    final_loss: float
    horizon_pos_error: np.ndarray
    iterations: int
    wall_time_s: float
    loss_curve: list = field(default_factory=list)


def build_windows(states, actions, horizon: int, episode_bounds=None):
    """Slice decision-rate arrays into overlapping fit windows.

    states: (N, 4), actions: (N, 3) with actions[i] taking states[i] to
    states[i+1]. episode_bounds: list of (start, end) index ranges that stop
    windows from spanning episodes. Returns (state0, acts, targets).
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if episode_bounds is None:
        episode_bounds = [(0, len(states))]
    s0, aa, tt = [], [], []
    for lo, hi in episode_bounds:
        for i in range(lo, hi - horizon):
            s0.append(states[i])
            aa.append(actions[i:i + horizon])
            tt.append(states[i + 1:i + 1 + horizon])
    if not s0:
        raise ValueError("no fit windows; trajectories shorter than horizon")
    return np.stack(s0), np.stack(aa), np.stack(tt)


def _project_odd(vec):
    k = vec[2:2 + N_STEER_KNOTS]
    vec[2:2 + N_STEER_KNOTS] = 0.5 * (k - k[::-1])
    return vec


def fit(state0, actions, targets, init: BicycleParams | None = None, config: FitConfig | None = None):
    """SGD fit of the ego model on rollout windows. Deterministic per seed."""
    cfg = config or FitConfig()
    vec = (init or default_init()).to_vector()
    if cfg.odd_symmetric:
        vec = _project_odd(vec.copy())
    n = len(state0)
    rng = np.random.default_rng(cfg.seed)
    t_start = time.perf_counter()
    iters = 0
    lr = cfg.lr
    decay_points = {int(cfg.epochs * frac) for frac in cfg.decay_at}
    loss_curve = []
    for epoch in range(cfg.epochs):
        if epoch in decay_points:
            lr *= cfg.decay_factor
        order = rng.permutation(n)
        epoch_loss = 0.0
        nb = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss, grad = loss_and_grad(vec, state0[idx], actions[idx], targets[idx])
            if cfg.odd_symmetric:
                _project_odd_grad(grad)
            gn = float(np.linalg.norm(grad))
            if gn > cfg.clip_norm:
                grad *= cfg.clip_norm / gn
            vec = vec - lr * grad
            if cfg.odd_symmetric:
                vec = _project_odd(vec)
            epoch_loss += loss
            nb += 1
            iters += 1
        loss_curve.append(epoch_loss / nb)
    params = BicycleParams.from_vector(vec)
    final_loss, _ = loss_and_grad(vec, state0, actions, targets)
    report = FitReport(
        final_loss=float(final_loss),
        horizon_pos_error=position_errors(params, state0, actions, targets),
        iterations=iters,
        wall_time_s=time.perf_counter() - t_start,
        loss_curve=loss_curve,
    )
    return params, report


def _project_odd_grad(grad):
    k = grad[2:2 + N_STEER_KNOTS]
    grad[2:2 + N_STEER_KNOTS] = 0.5 * (k - k[::-1])
    return grad


# -- params file ------------------------------------------------------------

PARAMS_MAGIC = "EGOPARAMS 1"


def write_params(params: BicycleParams, path):
    lines = [
        PARAMS_MAGIC,
        f"front_base {params.front_base!r}",
        f"rear_base {params.rear_base!r}",
        "steer_knots " + " ".join(repr(float(k)) for k in params.steer_knots),
        f"throttle_gain {params.throttle_gain!r}",
        f"throttle_bias {params.throttle_bias!r}",
        f"drag {params.drag!r}",
        f"brake_decel {params.brake_decel!r}",
    ]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_params(path) -> BicycleParams:
    with open(path) as f:
        raw = [ln.strip() for ln in f if ln.strip()]
    if not raw or raw[0] != PARAMS_MAGIC:
        raise ValueError(f"{path}: not an ego params file")
    kv = {}
    for ln in raw[1:]:
        key, _, rest = ln.partition(" ")
        kv[key] = rest
    return BicycleParams(
        front_base=float(kv["front_base"]),
        rear_base=float(kv["rear_base"]),
        steer_knots=np.array([float(t) for t in kv["steer_knots"].split()]),
        throttle_gain=float(kv["throttle_gain"]),
        throttle_bias=float(kv["throttle_bias"]),
        drag=float(kv["drag"]),
        brake_decel=float(kv["brake_decel"]),
    )
