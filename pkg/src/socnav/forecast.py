"""Sequence forecasting for tracked humans.

Two LSTM encoder-decoder branches, hand-rolled in numpy with full
backpropagation: a trajectory branch over agent-centric positions and a pose
branch over normalized keypoint vectors. The decoder runs autoregressively
for the 3-frame horizon; outputs are deltas added to the previous frame, so a
zero output head predicts "stays exactly where last seen".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optim import AdamState, NonFiniteGradient, named_arrays, zeros_like_tree
from .perception import Track

HIDDEN_DIM = 64
HORIZON = 3
TRAJ_INPUT = 2
POSE_INPUT = 51  # 17 keypoints x (u, v, conf)
GAMMA_POSE = 0.5   # confidence term weight
GAMMA_TRAJ = 0.5   # velocity term weight
GRAD_FLOOR = 1e-6  # smallest gradient magnitude compared relatively
GEO_FEATURE_DIM = 2 * HIDDEN_DIM


class ShapeMismatch(Exception):
    pass


@dataclass
class LSTMParams:
    Wx: np.ndarray  # (4H, I) gate order i, f, g, o
    Wh: np.ndarray  # (4H, H)
    b: np.ndarray   # (4H,)


@dataclass
class BranchParams:
    enc: LSTMParams
    dec: LSTMParams
    Wo: np.ndarray  # (O, H) output head
    bo: np.ndarray  # (O,)


@dataclass
class ForecasterParams:
    traj: BranchParams
    pose: BranchParams


def _init_lstm(gen: np.random.Generator, in_dim: int, hidden: int) -> LSTMParams:
    scale = 1.0 / math.sqrt(hidden)
    p = LSTMParams(
        Wx=gen.uniform(-scale, scale, (4 * hidden, in_dim)),
        Wh=gen.uniform(-scale, scale, (4 * hidden, hidden)),
        b=gen.uniform(-scale, scale, 4 * hidden))
    p.b[hidden:2 * hidden] += 1.0  # forget gate bias starts open
    return p


def _init_branch(gen: np.random.Generator, io_dim: int, hidden: int) -> BranchParams:
    scale = 1.0 / math.sqrt(hidden)
    return BranchParams(
        enc=_init_lstm(gen, io_dim, hidden),
        dec=_init_lstm(gen, io_dim, hidden),
        Wo=gen.uniform(-scale, scale, (io_dim, hidden)),
        bo=np.zeros(io_dim))


def init_forecaster(seed: int, hidden: int = HIDDEN_DIM) -> ForecasterParams:
    gen = np.random.default_rng(seed)
    return ForecasterParams(
        traj=_init_branch(gen, TRAJ_INPUT, hidden),
        pose=_init_branch(gen, POSE_INPUT, hidden))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_cell(x: np.ndarray, h: np.ndarray, c: np.ndarray, p: LSTMParams):
    """One LSTM step. x (B, I), h and c (B, H); returns (h', c')."""
    h2, c2, _ = _cell_forward(x, h, c, p)
    return h2, c2


def _cell_forward(x, h, c, p):
    hidden = p.Wh.shape[1]
    z = x @ p.Wx.T + h @ p.Wh.T + p.b
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden:2 * hidden])
    g = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = _sigmoid(z[:, 3 * hidden:])
    c2 = f * c + i * g
    tanh_c2 = np.tanh(c2)
    h2 = o * tanh_c2
    cache = (x, h, c, i, f, g, o, tanh_c2)
    return h2, c2, cache


def _cell_backward(cache, dh, dc_in, p, grads: LSTMParams):
    x, h_prev, c_prev, i, f, g, o, tanh_c = cache
    do = dh * tanh_c
    dc = dc_in + dh * o * (1.0 - tanh_c * tanh_c)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dzi = di * i * (1.0 - i)
    dzf = df * f * (1.0 - f)
    dzg = dg * (1.0 - g * g)
    dzo = do * o * (1.0 - o)
    dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
    grads.Wx += dz.T @ x
    grads.Wh += dz.T @ h_prev
    grads.b += dz.sum(axis=0)
    dx = dz @ p.Wx
    dh_prev = dz @ p.Wh
    return dx, dh_prev, dc_prev


def _branch_forward(params: BranchParams, x_seq: np.ndarray, last: np.ndarray,
                    horizon: int = HORIZON):
    """Encode x_seq (B, M, I), then decode `horizon` deltas autoregressively.

    Returns (absolute outputs (B, T, O), deltas (B, T, O), final encoder
    hidden (B, H), cache).
    """
    B, M, _ = x_seq.shape
    hidden = params.enc.Wh.shape[1]
    h = np.zeros((B, hidden))
    c = np.zeros((B, hidden))
    enc_caches = []
    for t in range(M):
        h, c, cache = _cell_forward(x_seq[:, t, :], h, c, params.enc)
        enc_caches.append(cache)
    feature = h

    dec_caches = []
    hs = []
    deltas = []
    outputs = []
    a = last
    hd, cd = h, c
    for _ in range(horizon):
        hd, cd, cache = _cell_forward(a, hd, cd, params.dec)
        dec_caches.append(cache)
        hs.append(hd)
        y = hd @ params.Wo.T + params.bo
        deltas.append(y)
        a = a + y
        outputs.append(a)
    abs_out = np.stack(outputs, axis=1)
    delta_out = np.stack(deltas, axis=1)
    cache = (enc_caches, dec_caches, hs, B, M, horizon)
    return abs_out, delta_out, feature, cache


def _branch_backward(params: BranchParams, cache, d_abs, d_deltas):
    """Backprop through decoder feedback and the encoder; returns grads."""
    enc_caches, dec_caches, hs, B, M, horizon = cache
    grads = BranchParams(
        enc=LSTMParams(np.zeros_like(params.enc.Wx), np.zeros_like(params.enc.Wh),
                       np.zeros_like(params.enc.b)),
        dec=LSTMParams(np.zeros_like(params.dec.Wx), np.zeros_like(params.dec.Wh),
                       np.zeros_like(params.dec.b)),
        Wo=np.zeros_like(params.Wo),
        bo=np.zeros_like(params.bo))
    hidden = params.enc.Wh.shape[1]
    dh_next = np.zeros((B, hidden))
    dc_next = np.zeros((B, hidden))
    da_next = np.zeros((B, params.Wo.shape[0]))
    for s in range(horizon - 1, -1, -1):
        da = d_abs[:, s, :] + da_next
        dy = da + d_deltas[:, s, :]
        grads.Wo += dy.T @ hs[s]
        grads.bo += dy.sum(axis=0)
        dh = dh_next + dy @ params.Wo
        dx, dh_next, dc_next = _cell_backward(dec_caches[s], dh, dc_next,
                                              params.dec, grads.dec)
        da_next = da + dx  # previous absolute feeds both the sum and the input
    dh, dc = dh_next, dc_next
    for t in range(M - 1, -1, -1):
        _, dh, dc = _cell_backward(enc_caches[t], dh, dc, params.enc, grads.enc)
    return grads


# ---------------------------------------------------------------------------
# losses


def pose_loss(pred: np.ndarray, gt: np.ndarray, gamma1: float = GAMMA_POSE) -> float:
    """Mean over keypoint-frame terms of squared coordinate error plus
    gamma1-weighted squared confidence error. pred and gt are (T, 17, 3)."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ShapeMismatch(f"pose shapes {pred.shape} vs {gt.shape}")
    coord = np.sum((pred[..., :2] - gt[..., :2]) ** 2, axis=-1)
    conf = gamma1 * (pred[..., 2] - gt[..., 2]) ** 2
    return float(np.mean(coord + conf))


def traj_loss(pred_pos: np.ndarray, pred_vel: np.ndarray,
              gt_pos: np.ndarray, gt_vel: np.ndarray,
              gamma2: float = GAMMA_TRAJ) -> float:
    """Mean over horizon frames of squared position error plus gamma2-weighted
    squared velocity error. All arguments are (T, 2)."""
    pred_pos = np.asarray(pred_pos, dtype=float)
    pred_vel = np.asarray(pred_vel, dtype=float)
    gt_pos = np.asarray(gt_pos, dtype=float)
    gt_vel = np.asarray(gt_vel, dtype=float)
    if not (pred_pos.shape == gt_pos.shape == pred_vel.shape == gt_vel.shape):
        raise ShapeMismatch("trajectory shapes disagree")
    pos = np.sum((pred_pos - gt_pos) ** 2, axis=-1)
    vel = gamma2 * np.sum((pred_vel - gt_vel) ** 2, axis=-1)
    return float(np.mean(pos + vel))


def gt_velocities(gt_pos: np.ndarray, last_obs: np.ndarray, dt: float) -> np.ndarray:
    """Finite-difference target velocities; the first frame differences
    against the last observed position."""
    prev = np.vstack([last_obs[None, :], gt_pos[:-1]])
    return (gt_pos - prev) / dt


# ---------------------------------------------------------------------------
# forecasting and training


@dataclass
class Forecast:
    track_id: int
    positions: np.ndarray   # (3, 2) agent-centric m
    velocities: np.ndarray  # (3, 2) m/s
    keypoints: np.ndarray   # (3, 17, 3) normalized u, v, confidence


@dataclass
class TrackFuture:
    positions: np.ndarray   # (3, 2)
    velocities: np.ndarray  # (3, 2)
    keypoints: np.ndarray   # (3, 17, 3)


def forecast_track(track: Track, params: ForecasterParams,
                   horizon: int = HORIZON):
    """Forecast one track; returns (Forecast, 128-d geometric feature).

    Trajectory inputs are centered on the last observed position so the
    branch is translation invariant; outputs are de-centered back to
    agent-centric coordinates.
    """
    pos = track.positions
    if pos.shape[0] < 3:
        raise ShapeMismatch(f"track {track.track_id} shorter than 3 frames")
    anchor = pos[-1]
    x_traj = (pos - anchor)[None, :, :]
    abs_t, delta_t, feat_t, _ = _branch_forward(params.traj, x_traj,
                                                np.zeros((1, TRAJ_INPUT)), horizon)
    kp_flat = track.keypoints.reshape(pos.shape[0], POSE_INPUT)
    x_pose = kp_flat[None, :, :]
    abs_p, _, feat_p, _ = _branch_forward(params.pose, x_pose,
                                          kp_flat[-1][None, :], horizon)
    positions = abs_t[0] + anchor
    velocities = delta_t[0] / track.dt
    keypoints = abs_p[0].reshape(horizon, 17, 3)
    geo = np.concatenate([feat_t[0], feat_p[0]])
    return Forecast(track.track_id, positions, velocities, keypoints), geo


def _group_by_length(batch):
    groups = {}
    for track, future in batch:
        groups.setdefault(track.positions.shape[0], []).append((track, future))
    return [groups[m] for m in sorted(groups)]


def _batch_losses_and_grads(params: ForecasterParams, batch, horizon: int,
                            want_grads: bool, branches=("traj", "pose"),
                            gamma_pose: float = GAMMA_POSE,
                            gamma_traj: float = GAMMA_TRAJ):
    n = len(batch)
    grads = zeros_like_tree(params) if want_grads else None
    pose_total = 0.0
    traj_total = 0.0
    for group in _group_by_length(batch):
        B = len(group)
        M = group[0][0].positions.shape[0]
        dt = group[0][0].dt
        if "traj" in branches:
            anchors = np.stack([t.positions[-1] for t, _ in group])
            x = np.stack([t.positions for t, _ in group]) - anchors[:, None, :]
            gt_pos = np.stack([f.positions for _, f in group]) - anchors[:, None, :]
            gt_vel = np.stack([f.velocities for _, f in group])
            abs_o, delta_o, _, cache = _branch_forward(
                params.traj, x, np.zeros((B, TRAJ_INPUT)), horizon)
            vel_o = delta_o / dt
            pos_err = abs_o - gt_pos
            vel_err = vel_o - gt_vel
            per_track = (np.sum(pos_err ** 2, axis=(1, 2))
                         + gamma_traj * np.sum(vel_err ** 2, axis=(1, 2))) / horizon
            traj_total += float(per_track.sum())
            if want_grads:
                d_abs = 2.0 * pos_err / (horizon * n)
                d_deltas = 2.0 * gamma_traj * vel_err / (horizon * n * dt)
                g = _branch_backward(params.traj, cache, d_abs, d_deltas)
                for (_, dst), (_, src) in zip(named_arrays(grads.traj), named_arrays(g)):
                    dst += src
        if "pose" in branches:
            x = np.stack([t.keypoints.reshape(M, POSE_INPUT) for t, _ in group])
            gt = np.stack([f.keypoints.reshape(horizon, POSE_INPUT) for _, f in group])
            abs_o, _, _, cache = _branch_forward(params.pose, x, x[:, -1, :], horizon)
            err = abs_o - gt
            # mean over T*17 keypoint-frame terms; confidence entries carry gamma1
            weights = np.ones(POSE_INPUT)
            weights[2::3] = gamma_pose
            per_track = np.sum(err ** 2 * weights, axis=(1, 2)) / (horizon * 17)
            pose_total += float(per_track.sum())
            if want_grads:
                d_abs = 2.0 * err * weights / (horizon * 17 * n)
                g = _branch_backward(params.pose, cache, d_abs, np.zeros_like(d_abs))
                for (_, dst), (_, src) in zip(named_arrays(grads.pose), named_arrays(g)):
                    dst += src
    return pose_total / n, traj_total / n, grads


def batch_losses(params: ForecasterParams, batch, horizon: int = HORIZON,
                 branches=("traj", "pose"), gamma_pose: float = GAMMA_POSE,
                 gamma_traj: float = GAMMA_TRAJ):
    p, t, _ = _batch_losses_and_grads(params, batch, horizon, False, branches,
                                      gamma_pose, gamma_traj)
    return p, t


def train_step(params: ForecasterParams, opt: AdamState, batch,
               lr: float, horizon: int = HORIZON, branches=("traj", "pose"),
               gamma_pose: float = GAMMA_POSE, gamma_traj: float = GAMMA_TRAJ):
    """One adaptive update on a batch of (Track, TrackFuture) pairs.

    Returns the pre-update (pose, traj) batch losses. A non-finite gradient
    raises NonFiniteGradient and leaves the parameters untouched.
    """
    if not batch:
        return 0.0, 0.0
    pose_l, traj_l, grads = _batch_losses_and_grads(params, batch, horizon,
                                                    True, branches,
                                                    gamma_pose, gamma_traj)
    opt.update(params, grads, lr)
    return pose_l, traj_l


def grad_check(params: ForecasterParams, batch, n_probes: int = 20,
               h: float = 1e-5, seed: int = 0,
               branches=("traj", "pose")) -> float:
    """Max relative error between analytic and central-difference gradients
    over randomly probed parameter entries."""
    gen = np.random.default_rng(seed)
    _, _, grads = _batch_losses_and_grads(params, batch, HORIZON, True, branches)
    pairs = list(zip(named_arrays(params), named_arrays(grads)))
    worst = 0.0
    for _ in range(n_probes):
        (name, arr), (_, g) = pairs[gen.integers(len(pairs))]
        idx = np.unravel_index(int(gen.integers(arr.size)), arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        pp, tp, _ = _batch_losses_and_grads(params, batch, HORIZON, False, branches)
        arr[idx] = orig - h
        pm, tm, _ = _batch_losses_and_grads(params, batch, HORIZON, False, branches)
        arr[idx] = orig
        numeric = ((pp + tp) - (pm + tm)) / (2.0 * h)
        analytic = float(g[idx])
        # Central differences on a float64 objective carry absolute noise
        # around eps*|loss|/(2h); entries with gradients below GRAD_FLOOR
        # are compared at that absolute scale instead of relatively.
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric),
                                            GRAD_FLOOR)
        worst = max(worst, rel)
    return worst
