"""Driving agents: privileged DP driver, CEM planner, distilled policy.

All three expose the same surface: `begin_episode(seed)` once per episode
and `act(snapshot, ego, command) -> Action` once per control decision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from microdrive.bicycle import BicycleParams, predict_array
from microdrive.grids import ActionGrid, GridSpec, PlanConfig, zero_grid
from microdrive.lane_map import Command, LaneMap
from microdrive.observation import observe
from microdrive.policy import ControlConfig, PolicyModel, act as policy_act
from microdrive.reward import RewardConfig, RewardField
from microdrive.values import backup, build_plan
from microdrive.world import Action, WorldMode, step_world


class PrivilegedAgent:
    """Acts by recomputing action values from the true world state.

    Future snapshots are forecast by replaying the scripted world stepper
    from the current snapshot (the same frozen-replay assumption training
    labels are built on), then one backup chain runs over them and the
    argmax action at the continuous ego state is executed. Ties resolve to
    the lowest action index.
    """

    def __init__(self, lane_map: LaneMap, params: BicycleParams,
                 actions: ActionGrid | None = None, config: PlanConfig | None = None,
                 reward_config: RewardConfig | None = None,
                 grid_kwargs: dict | None = None):
        self.lane_map = lane_map
        self.params = params
        self.actions = actions or ActionGrid()
        self.config = config or PlanConfig()
        self.reward_config = reward_config or RewardConfig()
        self.grid_kwargs = grid_kwargs or {}
        self._plan = None

    def begin_episode(self, seed):
        pass

    def q_values(self, snapshot, ego, command):
        """Fresh (n_actions,) action values at the true continuous state."""
        spec = GridSpec(anchor_x=ego.x, anchor_y=ego.y, anchor_theta=ego.theta,
                        **self.grid_kwargs)
        if self._plan is None:
            self._plan = build_plan(self.params, spec, self.actions, self.config.dt)
        snaps = [snapshot]
        for _ in range(self.config.horizon - 1):
            snaps.append(step_world(self.lane_map, snaps[-1], WorldMode.SCRIPTED))
        chain = self.lane_map.build_chain(ego.x, ego.y, ego.theta, Command(int(command)))
        field = RewardField(self.lane_map, chain, self.reward_config)
        grid = zero_grid(spec, t_index=self.config.horizon)
        result = None
        for k in range(self.config.horizon - 1, -1, -1):
            result = backup(grid, snaps[k], self.params, self.actions,
                            field, self.config, plan=self._plan)
            grid = result.v
        state = np.array([ego.x, ego.y, ego.theta, ego.v])
        return result.q_at(state[None, :], include_bonus=True)[0]

    def act(self, snapshot, ego, command) -> Action:
        q = self.q_values(snapshot, ego, command)
        return self.actions.action(int(np.argmax(q)))


@dataclass(frozen=True)
class CEMConfig:
    population: int = 64
    elites: int = 8
    iterations: int = 4
    horizon: int = 5
    gamma: float = 0.9
    init_steer_std: float = 0.5
    init_throttle_std: float = 0.4
    init_brake_p: float = 0.1
    min_std: float = 0.05

    def __post_init__(self):
        if self.population < self.elites:
            raise ValueError("population must be >= elites")
        if self.elites < 1 or self.iterations < 1 or self.horizon < 1:
            raise ValueError("elites, iterations, horizon must be >= 1")


@dataclass
class CEMPlanResult:
    steer: np.ndarray          # (H,)
    throttle: np.ndarray       # (H,)
    brake: np.ndarray          # (H,) bool
    elite_returns: list        # per-iteration mean elite return
    best_return: float


def _sequence_returns(field: RewardField, snapshot, ego, params, cfg: CEMConfig,
                      steer, throttle, brake):
    """Discounted modeled return of (N, H) action sequences, static world.

    Matches the backup's accounting: the brake bonus is non-accumulating,
    so only the first action can earn it.
    """
    n = steer.shape[0]
    states = np.tile(np.array([ego.x, ego.y, ego.theta, ego.v]), (n, 1))
    returns = np.zeros(n)
    g = 1.0
    for k in range(cfg.horizon):
        returns += g * field.drive_at(snapshot, states)
        if k == 0:
            bonus = field.brake_bonus_at(snapshot, states)
            returns += np.where(brake[:, 0], bonus, 0.0)
        acts = np.stack([steer[:, k], throttle[:, k], brake[:, k].astype(np.float64)], axis=-1)
        states = predict_array(params, states, acts)
        g *= cfg.gamma
    return returns


def cem_plan(lane_map: LaneMap, snapshot, ego, command, params: BicycleParams,
             reward_config: RewardConfig, cfg: CEMConfig, rng) -> CEMPlanResult:
    """Cross-entropy search over action sequences against a static world.

    Per-step Gaussians over steer/throttle (samples clipped to the valid
    ranges) and Bernoulli brake; each iteration refits the distribution to
    the elite fraction. Elites carry over into the next iteration's pool,
    which makes the mean elite return non-decreasing by construction.
    """
    H = cfg.horizon
    chain = lane_map.build_chain(ego.x, ego.y, ego.theta, Command(int(command)))
    field = RewardField(lane_map, chain, reward_config)
    mean_s = np.zeros(H)
    mean_t = np.full(H, 0.5)
    std_s = np.full(H, cfg.init_steer_std)
    std_t = np.full(H, cfg.init_throttle_std)
    p_b = np.full(H, cfg.init_brake_p)
    elite_s = elite_t = elite_b = None
    elite_r = None
    elite_means = []
    for _ in range(cfg.iterations):
        s = np.clip(rng.normal(mean_s, std_s, size=(cfg.population, H)), -1.0, 1.0)
        t = np.clip(rng.normal(mean_t, std_t, size=(cfg.population, H)), 0.0, 1.0)
        b = rng.random((cfg.population, H)) < p_b
        if elite_s is not None:
            s = np.concatenate([s, elite_s])
            t = np.concatenate([t, elite_t])
            b = np.concatenate([b, elite_b])
        r = _sequence_returns(field, snapshot, ego, params, cfg, s, t, b)
        order = np.argsort(-r, kind="stable")[:cfg.elites]
        elite_s, elite_t, elite_b, elite_r = s[order], t[order], b[order], r[order]
        elite_means.append(float(elite_r.mean()))
        mean_s = elite_s.mean(axis=0)
        mean_t = elite_t.mean(axis=0)
        std_s = np.maximum(elite_s.std(axis=0), cfg.min_std)
        std_t = np.maximum(elite_t.std(axis=0), cfg.min_std)
        p_b = elite_b.mean(axis=0)
    return CEMPlanResult(steer=np.clip(mean_s, -1.0, 1.0),
                         throttle=np.clip(mean_t, 0.0, 1.0),
                         brake=p_b >= 0.5,
                         elite_returns=elite_means,
                         best_return=float(elite_r[0]))


class CEMAgent:
    """Replanning model-predictive driver; executes the first planned action."""

    def __init__(self, lane_map: LaneMap, params: BicycleParams,
                 reward_config: RewardConfig | None = None,
                 config: CEMConfig | None = None):
        self.lane_map = lane_map
        self.params = params
        self.reward_config = reward_config or RewardConfig()
        self.config = config or CEMConfig()
        self._rng = np.random.default_rng(0)

    def begin_episode(self, seed):
        self._rng = np.random.default_rng(seed)

    def act(self, snapshot, ego, command) -> Action:
        plan = cem_plan(self.lane_map, snapshot, ego, command, self.params,
                        self.reward_config, self.config, self._rng)
        if plan.elite_returns != sorted(plan.elite_returns):
            raise AssertionError("elite mean return decreased across iterations")
        return Action(float(plan.steer[0]), float(plan.throttle[0]), bool(plan.brake[0]))


class ModelAgent:
    """Runs a distilled policy on rasters rendered from the world state."""

    def __init__(self, lane_map: LaneMap, model: PolicyModel,
                 control: ControlConfig | None = None):
        self.lane_map = lane_map
        self.model = model
        self.control = control or ControlConfig()

    def begin_episode(self, seed):
        pass

    def act(self, snapshot, ego, command) -> Action:
        obs = observe(self.lane_map, snapshot, ego)
        return policy_act(self.model, obs, ego.v, int(command), self.control)
