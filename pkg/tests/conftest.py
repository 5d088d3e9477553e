"""Shared small fixtures: a few recorded episodes and a quick ego fit.

These stay deliberately tiny so single-module test runs are fast; the
heavyweight end-to-end artifacts live in test_acceptance.py.
"""
import numpy as np
import pytest

from microdrive.bicycle import BicycleParams, STEER_KNOT_POS, build_windows, fit
from microdrive.collect import CollectConfig, collect_logs
from microdrive.lane_map import load_map


@pytest.fixture(scope="session")
def town_a():
    return load_map("town-a")


@pytest.fixture(scope="session")
def town_b():
    return load_map("town-b")


@pytest.fixture(scope="session")
def tiny_logs(town_a):
    cfg = CollectConfig(episodes=2, episode_s=30.0, n_npcs=4, seed=7)
    return collect_logs(town_a, cfg)


@pytest.fixture(scope="session")
def random_logs(town_a):
    cfg = CollectConfig(episodes=2, episode_s=30.0, n_npcs=0, policy="random",
                        seed=11, render_observations=False)
    return collect_logs(town_a, cfg)


@pytest.fixture(scope="session")
def ego_params(random_logs) -> BicycleParams:
    states = np.concatenate([l.ego for l in random_logs])
    actions = np.concatenate([l.actions for l in random_logs])
    bounds = []
    at = 0
    for l in random_logs:
        bounds.append((at, at + len(l)))
        at += len(l)
    s0, aa, tt = build_windows(states, actions, 10, bounds)
    params, _ = fit(s0, aa, tt)
    return params


@pytest.fixture(scope="session")
def true_params() -> BicycleParams:
    """Ego params assembled from the simulator's own constants.

    The one-step model at decision rate still differs slightly from five
    ground-truth ticks, but it is plenty for driving tests that should not
    pay for a fit.
    """
    k = STEER_KNOT_POS
    return BicycleParams(1.35, 1.45, 0.5 * k - 0.1 * k ** 3, 3.2, 0.12, 0.42, 4.5)
