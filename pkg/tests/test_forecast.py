import copy
import math

import numpy as np
import pytest

from socnav import forecast as fc
from socnav import train as tr
from socnav.optim import AdamState, named_arrays
from socnav.perception import Track
from oracles import naive_ade


def constant_velocity_batch(n_tracks, seed=0, m=6, horizon=3, dt=0.25,
                            sigma=0.0):
    """(Track, TrackFuture) pairs from noiseless straight-line walkers."""
    gen = np.random.default_rng(seed)
    batch = []
    for i in range(n_tracks):
        start = gen.uniform(-3.0, 3.0, size=2)
        speed = gen.uniform(0.3, 1.5)
        ang = gen.uniform(-math.pi, math.pi)
        vel = speed * np.array([math.cos(ang), math.sin(ang)])
        ts = np.arange(m + horizon)[:, None] * dt
        pos = start + vel * ts
        if sigma > 0.0:
            pos = pos + gen.normal(scale=sigma, size=pos.shape)
        kps = np.zeros((m + horizon, 17, 3))
        track = Track(track_id=i, positions=pos[:m].copy(),
                      keypoints=kps[:m], steps=list(range(m)), dt=dt,
                      truth_label="walking", ped_id=f"p{i}")
        gt_pos = pos[m:].copy()
        future = fc.TrackFuture(
            positions=gt_pos,
            velocities=fc.gt_velocities(gt_pos, pos[m - 1], dt),
            keypoints=kps[m:])
        batch.append((track, future))
    return batch


# ---------------------------------------------------------------------------
# cell and loss fixtures


def test_lstm_cell_hand_value():
    hidden = 1
    p = fc.LSTMParams(Wx=np.zeros((4, 1)), Wh=np.zeros((4, 1)),
                      b=np.array([0.0, 0.0, math.atanh(0.5), 0.0]))
    h, c = np.zeros((1, 1)), np.zeros((1, 1))
    h2, c2 = fc.lstm_cell(np.ones((1, 1)), h, c, p)
    assert c2[0, 0] == pytest.approx(0.25, abs=1e-15)
    assert h2[0, 0] == pytest.approx(0.5 * math.tanh(0.25), abs=1e-15)


def test_lstm_cell_zero_everything():
    p = fc.LSTMParams(Wx=np.zeros((8, 3)), Wh=np.zeros((8, 2)), b=np.zeros(8))
    h2, c2 = fc.lstm_cell(np.ones((4, 3)), np.zeros((4, 2)), np.zeros((4, 2)), p)
    assert np.array_equal(c2, np.zeros((4, 2)))
    assert np.array_equal(h2, np.zeros((4, 2)))


def test_pose_loss_single_term():
    pred = np.zeros((1, 1, 3))
    gt = np.zeros((1, 1, 3))
    pred[0, 0] = [1.0, 0.0, 0.8]
    gt[0, 0] = [0.0, 0.0, 1.0]
    assert fc.pose_loss(pred, gt, gamma1=0.5) == pytest.approx(1.02, abs=1e-15)


def test_pose_loss_mean_over_terms():
    pred = np.zeros((2, 1, 3))
    gt = np.zeros((2, 1, 3))
    pred[0, 0, 0] = 1.0   # squared error 1
    pred[1, 0, 1] = 2.0   # squared error 4
    assert fc.pose_loss(pred, gt) == pytest.approx(2.5, abs=1e-15)


def test_pose_loss_shape_check():
    with pytest.raises(fc.ShapeMismatch):
        fc.pose_loss(np.zeros((1, 17, 3)), np.zeros((2, 17, 3)))


def test_traj_loss_single_frame():
    pred_pos = np.array([[0.5, 0.0]])
    gt_pos = np.zeros((1, 2))
    pred_vel = np.array([[1.0, 0.0]])
    gt_vel = np.zeros((1, 2))
    assert fc.traj_loss(pred_pos, pred_vel, gt_pos, gt_vel,
                        gamma2=0.5) == pytest.approx(0.75, abs=1e-15)


def test_traj_loss_mean_without_velocity():
    pred_pos = np.array([[0.5, 0.0], [0.0, 0.5]])
    gt_pos = np.zeros((2, 2))
    zeros = np.zeros((2, 2))
    assert fc.traj_loss(pred_pos, zeros, gt_pos, zeros) == pytest.approx(
        0.25, abs=1e-15)


def test_gt_velocities_first_frame_uses_last_observation():
    gt_pos = np.array([[1.0, 0.0], [1.5, 0.0]])
    v = fc.gt_velocities(gt_pos, np.array([0.5, 0.0]), 0.25)
    assert np.allclose(v, [[2.0, 0.0], [2.0, 0.0]], atol=1e-12)


# ---------------------------------------------------------------------------
# forecasting


def test_forecast_track_shapes():
    params = fc.init_forecaster(0)
    (track, _) = constant_velocity_batch(1, seed=5)[0]
    out, geo = fc.forecast_track(track, params)
    assert out.positions.shape == (3, 2)
    assert out.velocities.shape == (3, 2)
    assert out.keypoints.shape == (3, 17, 3)
    assert geo.shape == (128,)
    assert np.isfinite(geo).all()


def test_forecast_track_rejects_short_track():
    params = fc.init_forecaster(0)
    track = Track(track_id=0, positions=np.zeros((2, 2)),
                  keypoints=np.zeros((2, 17, 3)), steps=[0, 1], dt=0.25,
                  truth_label="", ped_id="p")
    with pytest.raises(fc.ShapeMismatch):
        fc.forecast_track(track, params)


def test_forecast_translation_invariance():
    params = fc.init_forecaster(3)
    (track, _) = constant_velocity_batch(1, seed=9)[0]
    shifted = Track(track_id=0, positions=track.positions + np.array([5.0, -2.0]),
                    keypoints=track.keypoints, steps=track.steps, dt=track.dt,
                    truth_label=track.truth_label, ped_id=track.ped_id)
    a, _ = fc.forecast_track(track, params)
    b, _ = fc.forecast_track(shifted, params)
    assert np.allclose(b.positions - a.positions, [5.0, -2.0], atol=1e-9)
    assert np.allclose(a.velocities, b.velocities, atol=1e-9)


# ---------------------------------------------------------------------------
# gradients


def test_grad_check_passes():
    params = fc.init_forecaster(1)
    batch = tr.synthetic_forecast_batch(seed=0)
    assert fc.grad_check(params, batch, n_probes=30, seed=0) < 1e-4


def test_grad_check_catches_corrupted_hidden_gradient(monkeypatch):
    params = fc.init_forecaster(1)
    batch = tr.synthetic_forecast_batch(seed=0)
    original = fc._cell_backward

    def corrupted(cache, dh, dc_in, p, grads):
        out = original(cache, dh, dc_in, p, grads)
        grads.Wh *= 2.0   # wrong hidden-to-hidden gradient
        return out

    monkeypatch.setattr(fc, "_cell_backward", corrupted)
    assert fc.grad_check(params, batch, n_probes=40, seed=0) > 1e-2


# ---------------------------------------------------------------------------
# training steps


def test_train_step_zero_lr_keeps_params_bitwise():
    params = fc.init_forecaster(4)
    before = copy.deepcopy(params)
    opt = AdamState()
    batch = constant_velocity_batch(4, seed=2)
    fc.train_step(params, opt, batch, lr=0.0)
    for (_, a), (_, b) in zip(named_arrays(before), named_arrays(params)):
        assert np.array_equal(a, b)


def test_train_step_reports_pre_update_losses():
    params = fc.init_forecaster(4)
    opt = AdamState()
    batch = constant_velocity_batch(4, seed=2)
    p0, t0 = fc.batch_losses(params, batch)
    p1, t1 = fc.train_step(params, opt, batch, lr=1e-4)
    assert p1 == p0 and t1 == t0


def test_training_reduces_trajectory_loss():
    params = fc.init_forecaster(7)
    opt = AdamState()
    batch = constant_velocity_batch(8, seed=3)
    _, first = fc.batch_losses(params, batch)
    for _ in range(200):
        fc.train_step(params, opt, batch, lr=1e-3, branches=("traj",))
    _, last = fc.batch_losses(params, batch)
    assert last < first
    assert last < 0.05 * first


def test_trained_forecaster_extrapolates_constant_velocity():
    params = fc.init_forecaster(11)
    opt = AdamState()
    train_batch = constant_velocity_batch(32, seed=4)
    for _ in range(300):
        fc.train_step(params, opt, train_batch, lr=1e-3, branches=("traj",))
    test_batch = constant_velocity_batch(8, seed=99)
    errs = []
    for track, future in test_batch:
        out, _ = fc.forecast_track(track, params)
        errs.append(naive_ade(out.positions, future.positions))
    assert float(np.median(errs)) < 0.1
