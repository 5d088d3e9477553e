"""Reactive policy distilled from dense action-value labels.

The policy maps the binary observation raster to factorized categorical
controls: for each of the 6 navigation commands and each speed bin it emits
9 steering logits, 3 throttle logits, and one brake logit. The composed
28-way distribution puts probability sigmoid(brake_logit) on braking and
spreads the rest over the steer x throttle product:

    log pi(s, t, brake) = (1 - brake) * (log pi_s(s) + log pi_t(t))
                          + brake * log pi_b

Training maximizes the expected labeled return plus an entropy term; with
temperature alpha the per-state optimum is softmax(q / alpha). Everything
here is plain numpy with hand-written backprop, float64 end to end, so
gradients can be checked against finite differences tightly.
"""
from __future__ import annotations

import json
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from microdrive.grids import ActionGrid
from microdrive.lane_map import N_COMMANDS
from microdrive.logs import unpack_observation, pack_observation
from microdrive.observation import OBS_CHANNELS, OBS_SIZE
from microdrive.world import Action


def _log_softmax(z):
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def factor_logprobs(logits, m_steer=9, m_throttle=3):
    """Compose (..., m_s + m_t + 1) head logits into (..., 28) log-probs."""
    zs = logits[..., :m_steer]
    zt = logits[..., m_steer:m_steer + m_throttle]
    zb = logits[..., m_steer + m_throttle]
    ls = _log_softmax(zs)
    lt = _log_softmax(zt)
    lb = -_softplus(-zb)           # log sigmoid(zb)
    lnb = -_softplus(zb)           # log (1 - sigmoid(zb))
    joint = lnb[..., None, None] + ls[..., :, None] + lt[..., None, :]
    return np.concatenate(
        [joint.reshape(logits.shape[:-1] + (m_steer * m_throttle,)), lb[..., None]],
        axis=-1)


def closed_form_policy(q, alpha):
    """The unconstrained optimum of the distillation objective."""
    z = np.asarray(q, dtype=np.float64) / alpha
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def distill_loss(logits, q, alpha, m_steer=9, m_throttle=3):
    """Entropy-regularized expected-return loss and its logit gradient.

    loss = -sum_a pi_a q_a - alpha * H(pi), summed over leading dims.
    `logits` may be a full 28-way score vector (softmax parameterization)
    or the factorized 13-logit head; the gradient matches its shape.
    """
    logits = np.asarray(logits, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if not np.isfinite(q).all():
        bad = np.argwhere(~np.isfinite(q.reshape(-1)))[0, 0]
        raise ValueError(f"non-finite action value at flat index {int(bad)}")
    n_act = q.shape[-1]
    factored = logits.shape[-1] == m_steer + m_throttle + 1 and logits.shape[-1] != n_act
    if factored:
        lp = factor_logprobs(logits, m_steer, m_throttle)
    elif logits.shape[-1] == n_act:
        lp = _log_softmax(logits)
    else:
        raise ValueError(f"logit width {logits.shape[-1]} fits neither the "
                         f"factorized head nor the {n_act}-way table")
    p = np.exp(lp)
    loss = float(np.sum(-(p * q).sum(-1) + alpha * (p * lp).sum(-1)))
    g = -q + alpha * (lp + 1.0)
    if not factored:
        grad = p * (g - (p * g).sum(-1, keepdims=True))
        return loss, grad
    b = p[..., -1]
    nb = 1.0 - b
    # steer/throttle marginals of the non-brake block (the gate factors out)
    zsm = np.exp(_log_softmax(logits[..., :m_steer]))
    ztm = np.exp(_log_softmax(logits[..., m_steer:m_steer + m_throttle]))
    G = g[..., :m_steer * m_throttle].reshape(q.shape[:-1] + (m_steer, m_throttle))
    e_s = (G * ztm[..., None, :]).sum(-1)                    # (..., m_s)
    e_t = (G * zsm[..., :, None]).sum(-2)                    # (..., m_t)
    e_all = (zsm * e_s).sum(-1)                              # (...,)
    grad = np.empty_like(logits)
    grad[..., :m_steer] = nb[..., None] * zsm * (e_s - e_all[..., None])
    grad[..., m_steer:m_steer + m_throttle] = nb[..., None] * ztm * (e_t - e_all[..., None])
    grad[..., m_steer + m_throttle] = b * nb * (g[..., -1] - e_all)
    return loss, grad


# -- model --------------------------------------------------------------------

@dataclass
class PolicyModel:
    """Small raster-to-logits net with named parameter arrays.

    Two stride-2 weight-sharing layers shrink the 64x64 raster to 16x16,
    a 128-unit hidden layer absorbs it, and one affine head emits
    (n_commands, n_v, m_s + m_t + 1) logits.
    """

    params: dict
    n_commands: int = N_COMMANDS
    n_v: int = 4
    m_steer: int = 9
    m_throttle: int = 3
    v_lo: float = 0.0
    d_v: float = 2.0
    conv_channels: tuple = (8, 16)
    kernel: int = 4
    stride: int = 2
    hidden: int = 128

    @property
    def head_width(self):
        return self.m_steer + self.m_throttle + 1

    @property
    def n_outputs(self):
        return self.n_commands * self.n_v * self.head_width

    def param_names(self):
        return ["conv1_w", "conv1_b", "conv2_w", "conv2_b",
                "fc1_w", "fc1_b", "fc2_w", "fc2_b"]


def init_model(seed=0, **kwargs) -> PolicyModel:
    model = PolicyModel(params={}, **kwargs)
    rng = np.random.default_rng(seed)
    k, c1, c2 = model.kernel, *model.conv_channels
    side = OBS_SIZE // (model.stride ** 2)
    flat = c2 * side * side

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    model.params = {
        "conv1_w": he((c1, OBS_CHANNELS, k, k), OBS_CHANNELS * k * k),
        "conv1_b": np.zeros(c1),
        "conv2_w": he((c2, c1, k, k), c1 * k * k),
        "conv2_b": np.zeros(c2),
        "fc1_w": he((model.hidden, flat), flat),
        "fc1_b": np.zeros(model.hidden),
        "fc2_w": he((model.n_outputs, model.hidden), model.hidden),
        "fc2_b": np.zeros(model.n_outputs),
    }
    # start the brake gate mostly open: a saturated gate multiplies the whole
    # steer/throttle gradient by (1 - p_brake) and can freeze training
    fc2_b = model.params["fc2_b"].reshape(model.n_commands, model.n_v,
                                          model.head_width)
    fc2_b[:, :, model.m_steer + model.m_throttle] = -2.0
    return model


def _im2col(x, k, stride, pad):
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    cols = np.empty((B, C, k, k, Ho, Wo))
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride]
    return cols.reshape(B, C * k * k, Ho * Wo), (Ho, Wo)


def _col2im(dcols, xshape, k, stride, pad, out_hw):
    B, C, H, W = xshape
    Ho, Wo = out_hw
    d6 = dcols.reshape(B, C, k, k, Ho, Wo)
    dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += d6[:, :, ki, kj]
    return dxp[:, :, pad:pad + H, pad:pad + W]


def _conv_forward(x, w, b, stride, pad):
    cols, out_hw = _im2col(x, w.shape[-1], stride, pad)
    wm = w.reshape(w.shape[0], -1)
    y = np.matmul(wm, cols) + b[None, :, None]
    return y.reshape(x.shape[0], w.shape[0], *out_hw), (cols, out_hw)


def _conv_backward(dy, x, w, stride, pad, cache):
    cols, out_hw = cache
    B = x.shape[0]
    dym = dy.reshape(B, w.shape[0], -1)
    wm = w.reshape(w.shape[0], -1)
    dw = np.einsum("bol,bil->oi", dym, cols).reshape(w.shape)
    db = dym.sum(axis=(0, 2))
    dcols = np.matmul(wm.T, dym)
    dx = _col2im(dcols, x.shape, w.shape[-1], stride, pad, out_hw)
    return dx, dw, db


def forward(model: PolicyModel, obs, want_cache=False):
    """obs (B, 10, 64, 64) 0/1 -> logits (B, n_commands, n_v, head_width)."""
    p = model.params
    x = np.asarray(obs, dtype=np.float64)
    h1, c1 = _conv_forward(x, p["conv1_w"], p["conv1_b"], model.stride, 1)
    a1 = np.maximum(h1, 0.0)
    h2, c2 = _conv_forward(a1, p["conv2_w"], p["conv2_b"], model.stride, 1)
    a2 = np.maximum(h2, 0.0)
    flat = a2.reshape(x.shape[0], -1)
    h3 = flat @ p["fc1_w"].T + p["fc1_b"]
    a3 = np.maximum(h3, 0.0)
    z = a3 @ p["fc2_w"].T + p["fc2_b"]
    logits = z.reshape(x.shape[0], model.n_commands, model.n_v, model.head_width)
    if not want_cache:
        return logits
    return logits, (x, c1, h1, a1, c2, h2, a2, flat, h3, a3)


def backward(model: PolicyModel, cache, dlogits):
    """Gradient of a scalar loss w.r.t. every named parameter."""
    p = model.params
    x, c1, h1, a1, c2, h2, a2, flat, h3, a3 = cache
    dz = np.asarray(dlogits).reshape(x.shape[0], -1)
    grads = {}
    grads["fc2_w"] = dz.T @ a3
    grads["fc2_b"] = dz.sum(axis=0)
    da3 = dz @ p["fc2_w"]
    dh3 = da3 * (h3 > 0.0)
    grads["fc1_w"] = dh3.T @ flat
    grads["fc1_b"] = dh3.sum(axis=0)
    dflat = dh3 @ p["fc1_w"]
    da2 = dflat.reshape(a2.shape) * (h2 > 0.0)
    da1, grads["conv2_w"], grads["conv2_b"] = _conv_backward(
        da2, a1, p["conv2_w"], model.stride, 1, c2)
    da1 *= (h1 > 0.0)
    _, grads["conv1_w"], grads["conv1_b"] = _conv_backward(
        da1, x, p["conv1_w"], model.stride, 1, c1)
    return grads


# -- training -----------------------------------------------------------------

@dataclass
class DistillConfig:
    alpha: float = 1e-2
    lr: float = 3e-4
    batch: int = 128
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    use_speed_augmentation: bool = True
    use_pose_augmentation: bool = True

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if self.lr <= 0.0:
            raise ValueError("lr must be > 0")


@dataclass
class DistillDataset:
    """Tick-aligned (observation, q-table) pose samples.

    Sample i is one ego pose: the recorded one or a replica. Observations
    are kept bit-packed and inflated per batch.
    """

    obs_packed: list                 # S entries
    q: np.ndarray                    # (S, n_commands, n_v, n_actions) f4
    speed_bin: np.ndarray            # (S,) recorded-speed bin of the source frame
    is_replica: np.ndarray           # (S,) bool
    n_v: int
    v_lo: float
    d_v: float

    def __len__(self):
        return len(self.obs_packed)

    def observations(self, idx):
        out = np.empty((len(idx), OBS_CHANNELS, OBS_SIZE, OBS_SIZE), dtype=np.uint8)
        for row, i in enumerate(idx):
            out[row] = unpack_observation(self.obs_packed[i])
        return out


def speed_bin_of(v, v_lo, d_v, n_v):
    f = (v - v_lo) / d_v - 0.5
    return int(np.clip(np.round(f), 0, n_v - 1))


def build_dataset(label_files, logs, lane_map, render_replicas=True) -> DistillDataset:
    """Join q-label files with their logs by tick; render replica rasters.

    `label_files` and `logs` are parallel sequences (QLabelFile,
    TrajectoryLog). Raises on any tick that has labels but no log record.
    """
    from microdrive.observation import observe
    from microdrive.world import EgoState

    obs_packed = []
    qs = []
    sbins = []
    is_rep = []
    n_v = v_lo = d_v = None
    for lf, traj in zip(label_files, logs):
        n_v = lf.grid_kwargs["n_v"]
        v_lo = lf.grid_kwargs["v_lo"]
        d_v = lf.grid_kwargs["d_v"]
        tick_row = {int(t): i for i, t in enumerate(traj.ticks)}
        for fi in range(len(lf)):
            tick = int(lf.ticks[fi])
            if tick not in tick_row:
                raise ValueError(f"label tick {tick} missing from log {traj.path or '<memory>'}")
            row = tick_row[tick]
            obs = traj.observations[row]
            if obs is None:
                raise ValueError(f"log {traj.path or '<memory>'} lacks observations at tick {tick}")
            sb = speed_bin_of(float(lf.anchors[fi, 3]), v_lo, d_v, n_v)
            obs_packed.append(pack_observation(obs))
            qs.append(lf.q[fi])
            sbins.append(sb)
            is_rep.append(False)
            if render_replicas and len(lf.replica_offsets):
                snap = traj.snapshots[row]
                for ri, pose in enumerate(lf.replica_poses(fi)):
                    ego = EgoState(float(pose[0]), float(pose[1]), float(pose[2]),
                                   float(lf.anchors[fi, 3]))
                    obs_packed.append(pack_observation(observe(lane_map, snap, ego)))
                    qs.append(lf.replica_q[fi, ri])
                    sbins.append(sb)
                    is_rep.append(True)
    if not obs_packed:
        raise ValueError("no aligned frames between labels and logs")
    return DistillDataset(obs_packed=obs_packed,
                          q=np.asarray(qs, dtype=np.float32),
                          speed_bin=np.asarray(sbins, dtype=np.int64),
                          is_replica=np.asarray(is_rep, dtype=bool),
                          n_v=n_v, v_lo=v_lo, d_v=d_v)


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    n_samples: int = 0
    n_batches: int = 0
    seconds: float = 0.0


def batch_loss(model: PolicyModel, obs, q, speed_bins, config: DistillConfig):
    """Mean per-sample loss over a batch plus parameter gradients.

    The loss for one sample sums the head objective over all commands and,
    with speed augmentation, over all speed bins; otherwise only the
    recorded-speed bin's head sees a gradient.
    """
    B = obs.shape[0]
    logits, cache = forward(model, obs, want_cache=True)
    q = np.asarray(q, dtype=np.float64)
    if config.use_speed_augmentation:
        loss, dlogits = distill_loss(logits, q, config.alpha,
                                     model.m_steer, model.m_throttle)
    else:
        rows = np.arange(B)
        sub = logits[rows, :, speed_bins]           # (B, n_cmd, 13)
        loss, dsub = distill_loss(sub, q[rows, :, speed_bins], config.alpha,
                                  model.m_steer, model.m_throttle)
        dlogits = np.zeros_like(logits)
        dlogits[rows, :, speed_bins] = dsub
    grads = backward(model, cache, dlogits / B)
    return loss / B, grads


def train(model: PolicyModel, dataset: DistillDataset, config: DistillConfig):
    """Adam over shuffled pose samples; deterministic given the seed."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    idx_all = np.arange(len(dataset))
    if not config.use_pose_augmentation:
        idx_all = idx_all[~dataset.is_replica]
    if len(idx_all) == 0:
        raise ValueError("empty training set")
    m1 = {k: np.zeros_like(v) for k, v in model.params.items()}
    m2 = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    report = TrainReport(n_samples=len(idx_all))
    for _ in range(config.epochs):
        order = rng.permutation(idx_all)
        total = 0.0
        nb = 0
        for lo in range(0, len(order), config.batch):
            sel = order[lo:lo + config.batch]
            obs = dataset.observations(sel)
            loss, grads = batch_loss(model, obs, dataset.q[sel],
                                     dataset.speed_bin[sel], config)
            step += 1
            b1c = 1.0 - config.beta1 ** step
            b2c = 1.0 - config.beta2 ** step
            for k, g in grads.items():
                m1[k] = config.beta1 * m1[k] + (1.0 - config.beta1) * g
                m2[k] = config.beta2 * m2[k] + (1.0 - config.beta2) * g * g
                model.params[k] -= config.lr * (m1[k] / b1c) / (
                    np.sqrt(m2[k] / b2c) + 1e-8)
            total += loss
            nb += 1
            if not all(np.isfinite(v).all() for v in model.params.values()):
                raise FloatingPointError("non-finite parameters after update")
        report.epoch_loss.append(total / nb)
        report.n_batches += nb
    report.seconds = time.perf_counter() - t0
    return model, report


# -- control decoding ---------------------------------------------------------

@dataclass(frozen=True)
class ControlConfig:
    brake_threshold: float = 0.5
    speed_cap: float = 6.0

    def __post_init__(self):
        if not (0.0 < self.brake_threshold < 1.0):
            raise ValueError("brake threshold must be in (0, 1)")


def decode_logits(logits13, speed, model: PolicyModel, control: ControlConfig):
    """Continuous Action from one interpolated 13-logit head."""
    ag = ActionGrid(m_steer=model.m_steer, m_throttle=model.m_throttle)
    m_s, m_t = model.m_steer, model.m_throttle
    ps = np.exp(_log_softmax(logits13[:m_s]))
    pt = np.exp(_log_softmax(logits13[m_s:m_s + m_t]))
    steer = float(ps @ ag.steer_values())
    throttle = float(pt @ ag.throttle_values())
    if speed > control.speed_cap:
        throttle = 0.0
    brake = bool(sigmoid(logits13[m_s + m_t]) >= control.brake_threshold)
    return Action(steer, throttle, brake)


def act(model: PolicyModel, obs, speed, command, control: ControlConfig | None = None) -> Action:
    """Decode one continuous control from the raster at the current speed.

    Head logits are linearly interpolated between the two speed bins that
    bracket the measured speed (clamped at the edge bins).
    """
    control = control or ControlConfig()
    logits = forward(model, np.asarray(obs)[None])[0, int(command)]   # (n_v, 13)
    f = (speed - model.v_lo) / model.d_v - 0.5
    f = float(np.clip(f, 0.0, model.n_v - 1))
    k0 = min(int(np.floor(f)), model.n_v - 2)
    w = f - k0
    mix = (1.0 - w) * logits[k0] + w * logits[k0 + 1]
    return decode_logits(mix, speed, model, control)


# -- model file ---------------------------------------------------------------

MODEL_MAGIC = b"POLMDL1\n"


def save_model(model: PolicyModel, path):
    header = {
        "arch": "conv-s2 x2, fc, per-command speed-bin heads",
        "n_commands": model.n_commands, "n_v": model.n_v,
        "m_steer": model.m_steer, "m_throttle": model.m_throttle,
        "v_lo": model.v_lo, "d_v": model.d_v,
        "conv_channels": list(model.conv_channels),
        "kernel": model.kernel, "stride": model.stride, "hidden": model.hidden,
        "arrays": [[n, list(model.params[n].shape)] for n in model.param_names()],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in model.param_names():
            fh.write(model.params[name].astype("<f4").tobytes())


def load_model(path) -> PolicyModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a policy model file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        params = {}
        for name, shape in header["arrays"]:
            n = int(np.prod(shape))
            params[name] = np.frombuffer(fh.read(4 * n), dtype="<f4").astype(np.float64).reshape(shape)
    return PolicyModel(params=params,
                       n_commands=header["n_commands"], n_v=header["n_v"],
                       m_steer=header["m_steer"], m_throttle=header["m_throttle"],
                       v_lo=header["v_lo"], d_v=header["d_v"],
                       conv_channels=tuple(header["conv_channels"]),
                       kernel=header["kernel"], stride=header["stride"],
                       hidden=header["hidden"])
