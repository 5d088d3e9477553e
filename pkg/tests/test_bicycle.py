"""Ego forward model: prediction, fitting, gradients, params file."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microdrive.bicycle import (
    PARAMS_MAGIC,
    STEER_KNOT_POS,
    BicycleParams,
    FitConfig,
    build_windows,
    default_init,
    fit,
    loss_and_grad,
    position_errors,
    predict,
    predict_array,
    read_params,
    rollout_array,
    wheel_angle,
    write_params,
)
from microdrive.world import Action, EgoState


def _params():
    knots = 0.45 * STEER_KNOT_POS - 0.08 * STEER_KNOT_POS ** 3
    return BicycleParams(1.4, 1.5, knots, 3.0, 0.1, 0.4, 4.0)


class TestPredict:
    def test_one_step_hand_oracle(self):
        # f_b=r_b=1.5, phi=0.2, v=4, theta=0, dt=0.25
        knots = np.zeros(len(STEER_KNOT_POS))
        knots[:] = 0.2  # constant map so any steer yields phi=0.2
        p = BicycleParams(1.5, 1.5, knots, 2.0, 0.0, 0.0, 4.0)
        dt = 0.25
        beta = math.atan(0.5 * math.tan(0.2))
        out = predict_array(p, np.array([0.0, 0.0, 0.0, 4.0]),
                            np.array([0.3, 0.5, 0.0]), dt)
        assert out[0] == pytest.approx(dt * 4.0 * math.cos(beta), abs=1e-9)
        assert out[1] == pytest.approx(dt * 4.0 * math.sin(beta), abs=1e-9)
        assert out[2] == pytest.approx(dt * (4.0 / 1.5) * math.sin(beta), abs=1e-9)
        assert out[3] == pytest.approx(4.0 + dt * (2.0 * 0.5), abs=1e-9)

    def test_brake_ignores_steer(self):
        p = _params()
        a = predict_array(p, np.array([0.0, 0.0, 0.0, 5.0]),
                          np.array([0.9, 1.0, 1.0]))
        b = predict_array(p, np.array([0.0, 0.0, 0.0, 5.0]),
                          np.array([-0.9, 0.0, 1.0]))
        np.testing.assert_allclose(a, b, atol=0.0)
        assert a[3] == pytest.approx(5.0 - 0.25 * p.brake_decel)

    def test_rollout_matches_naive_loop(self):
        p = _params()
        rng = np.random.default_rng(0)
        s0 = np.array([1.0, -2.0, 0.4, 3.0])
        acts = np.column_stack([
            rng.uniform(-1, 1, 10), rng.uniform(0, 1, 10),
            (rng.random(10) < 0.2).astype(float)])
        got = rollout_array(p, s0, acts)
        cur = s0
        for t in range(10):
            cur = predict_array(p, cur, acts[t])
            np.testing.assert_array_equal(got[t], cur)

    def test_rigid_transform_equivariance(self):
        p = _params()
        rng = np.random.default_rng(3)
        for _ in range(20):
            s = rng.uniform([-5, -5, -3, 0], [5, 5, 3, 8])
            a = np.array([rng.uniform(-1, 1), rng.uniform(0, 1), 0.0])
            dx, dy, dth = rng.uniform([-9, -9, -3], [9, 9, 3])
            out = predict_array(p, s, a)
            c, si = math.cos(dth), math.sin(dth)
            moved = np.array([
                dx + c * s[0] - si * s[1], dy + si * s[0] + c * s[1],
                s[2] + dth, s[3]])
            out_moved = predict_array(p, moved, a)
            assert out_moved[0] == pytest.approx(dx + c * out[0] - si * out[1], abs=1e-9)
            assert out_moved[1] == pytest.approx(dy + si * out[0] + c * out[1], abs=1e-9)
            assert out_moved[2] == pytest.approx(out[2] + dth, abs=1e-9)
            assert out_moved[3] == pytest.approx(out[3], abs=1e-9)

    def test_predict_wraps_ego_state(self):
        p = _params()
        out = predict(p, EgoState(0, 0, 0, 3.0), Action(0.1, 0.5, False))
        assert isinstance(out, EgoState)
        assert out.v > 0

    @given(st.floats(-1.0, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_wheel_angle_interpolates_knots(self, s):
        p = _params()
        phi = float(wheel_angle(p, s))
        lo = float(np.interp(s, STEER_KNOT_POS, p.steer_knots))
        assert phi == pytest.approx(lo, abs=1e-12)


class TestGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(7)
        p = _params()
        vec = p.to_vector()
        B, T = 6, 4
        s0 = rng.uniform([-3, -3, -2, 0.5], [3, 3, 2, 7], size=(B, 4))
        acts = np.stack([
            rng.uniform(-1, 1, (B, T)), rng.uniform(0, 1, (B, T)),
            (rng.random((B, T)) < 0.25).astype(float)], axis=-1)
        targets = rollout_array(p, s0, acts) + rng.normal(0, 0.3, (B, T, 4))
        _, grad = loss_and_grad(vec, s0, acts, targets)
        eps = 1e-6
        for k in range(len(vec)):
            vp, vm = vec.copy(), vec.copy()
            vp[k] += eps
            vm[k] -= eps
            lp, _ = loss_and_grad(vp, s0, acts, targets)
            lm, _ = loss_and_grad(vm, s0, acts, targets)
            fd = (lp - lm) / (2 * eps)
            denom = max(abs(fd), abs(grad[k]), 1e-8)
            assert abs(grad[k] - fd) / denom < 1e-4, f"param {k}"


class TestFit:
    def test_recovers_planted_dynamics(self, town_a):
        """Data generated by a known parameter set is fit back accurately."""
        rng = np.random.default_rng(1)
        true = _params()
        states = [np.array([0.0, 0.0, 0.0, 2.0])]
        acts = []
        for _ in range(500):
            a = np.array([rng.uniform(-1, 1), rng.uniform(0, 1),
                          float(rng.random() < 0.1)])
            acts.append(a)
            states.append(predict_array(true, states[-1], a))
        states = np.asarray(states[:-1])
        acts = np.asarray(acts)
        s0, aa, tt = build_windows(states, acts, horizon=8)
        fitted, report = fit(s0, aa, tt, config=FitConfig(epochs=40, seed=0))
        err = position_errors(fitted, s0, aa, tt)
        assert float(np.mean(err)) < 0.05
        assert report.final_loss < report.loss_curve[0]

    def test_zero_lr_is_identity(self):
        rng = np.random.default_rng(2)
        init = default_init()
        s0 = rng.uniform(-1, 1, (8, 4)) + np.array([0, 0, 0, 3.0])
        aa = rng.uniform(0, 1, (8, 3, 3))
        tt = rng.uniform(-1, 1, (8, 3, 4))
        fitted, _ = fit(s0, aa, tt, init=init,
                        config=FitConfig(lr=1e-30, epochs=3, seed=0))
        np.testing.assert_allclose(fitted.to_vector(), init.to_vector(), atol=1e-12)

    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(3)
        true = _params()
        s0 = rng.uniform([-2, -2, -1, 1], [2, 2, 1, 6], (64, 4))
        aa = np.stack([rng.uniform(-1, 1, (64, 5)), rng.uniform(0, 1, (64, 5)),
                       np.zeros((64, 5))], axis=-1)
        tt = rollout_array(true, s0, aa)
        f1, _ = fit(s0, aa, tt, config=FitConfig(epochs=5, seed=4))
        f2, _ = fit(s0, aa, tt, config=FitConfig(epochs=5, seed=4))
        np.testing.assert_array_equal(f1.to_vector(), f2.to_vector())

    def test_odd_symmetry_enforced(self):
        rng = np.random.default_rng(4)
        true = _params()
        s0 = rng.uniform([-2, -2, -1, 1], [2, 2, 1, 6], (64, 4))
        aa = np.stack([rng.uniform(-1, 1, (64, 5)), rng.uniform(0, 1, (64, 5)),
                       np.zeros((64, 5))], axis=-1)
        tt = rollout_array(true, s0, aa)
        fitted, _ = fit(s0, aa, tt, config=FitConfig(epochs=5, odd_symmetric=True))
        k = fitted.steer_knots
        np.testing.assert_allclose(k, -k[::-1], atol=1e-12)


class TestWindows:
    def test_windows_respect_episode_bounds(self):
        states = np.zeros((10, 4))
        states[:, 0] = np.arange(10)
        acts = np.zeros((10, 3))
        s0, aa, tt = build_windows(states, acts, horizon=3,
                                   episode_bounds=[(0, 5), (5, 10)])
        # windows never straddle the 5-boundary: every window's first target
        # x must be exactly one greater than its start x
        starts = s0[:, 0]
        firsts = tt[:, 0, 0]
        np.testing.assert_allclose(firsts - starts, 1.0)
        assert aa.shape[1:] == (3, 3)
        assert not any(4.0 < s < 5.0 for s in starts)
        assert len(s0) == 2 * (5 - 3)


class TestParamsFile:
    def test_round_trip(self, tmp_path):
        p = _params()
        path = tmp_path / "ego.params"
        write_params(p, str(path))
        back = read_params(str(path))
        np.testing.assert_array_equal(back.to_vector(), p.to_vector())
        assert path.read_text().startswith(PARAMS_MAGIC)

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.params"
        path.write_text("NOTPARAMS 1\n")
        with pytest.raises(ValueError):
            read_params(str(path))
