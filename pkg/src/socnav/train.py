"""Social navigation losses and the imitation training loop.

The policy is trained by expert imitation (cross entropy against the
geodesic-greedy action) plus a differentiable expected social penalty: the
probability-weighted collision/proximity cost of each action evaluated
against forecast human positions. Forecasters are fine-tuned online from
bookkeeping futures. Forecasting losses are annealed away as training
progresses.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import forecast as fc
from . import world
from .agent import (DecisionRecord, ExpertNotAvailable, Models, RunnerConfig,
                    navigate_episode)
from .optim import AdamState, tree_add_, tree_scale_, zeros_like_tree
from .perception import Track
from .semantic import InterpreterConfig
from .topo import PolicyInputs, init_policy, policy_backward, policy_forward
from .util import config_hash

DELTA_PENALTY = 3.0   # m, per-contact collision penalty and success radius
SAFETY_RADIUS = 1.0   # m, proximity losses apply inside this
PROX_EPS = 0.0625     # m^2, proximity kernel clamp
COLLISION_RADIUS = world.COLLISION_RADIUS
MIN_ANNEAL = 0.1


def front_weight(theta: float) -> float:
    """Directional weight of a human at bearing theta: 1.0 ahead, 0.25 behind."""
    return 0.25 + 0.375 * (1.0 + math.cos(theta))


def collision_loss(n_contacts: int, lam: float = 1.0,
                   delta: float = DELTA_PENALTY) -> float:
    """Fixed penalty per predicted contact."""
    return lam * n_contacts * delta


def proximity_loss(d_vecs, thetas, lam: float = 1.0,
                   r_s: float = SAFETY_RADIUS, eps: float = PROX_EPS) -> float:
    """Front-weighted inverse-square penalty for humans within the safety
    radius. d_vecs (N, 2) point from the closest approach toward each human;
    thetas are their bearings relative to the motion heading."""
    d_vecs = np.asarray(d_vecs, dtype=float).reshape(-1, 2)
    thetas = np.asarray(thetas, dtype=float).reshape(-1)
    total = 0.0
    for d, th in zip(d_vecs, thetas):
        dist_sq = float(d[0] * d[0] + d[1] * d[1])
        if math.sqrt(dist_sq) <= r_s:
            total += front_weight(th) / max(dist_sq, eps)
    return lam * total


def nav_loss(probs: np.ndarray, expert_idx: int) -> float:
    """Cross entropy against the expert action."""
    return float(-np.log(probs[expert_idx]))


@dataclass
class ExpectedPenalty:
    value: float              # sum_a p(a) * penalty(a)
    coll: float               # expected collision component
    prox: float               # expected proximity component
    penalties: np.ndarray     # (K+1,) per-action totals
    coll_parts: np.ndarray
    prox_parts: np.ndarray


def _extend_track(pts: np.ndarray, n: int, dt: float) -> np.ndarray:
    """First n frames of a forecast track, constant velocity past its end."""
    if n <= len(pts):
        return pts[:n]
    v = (pts[-1] - pts[-2]) / dt if len(pts) >= 2 else np.zeros(2)
    k = np.arange(1, n - len(pts) + 1)[:, None] * dt
    return np.vstack([pts, pts[-1] + k * v])


def expected_social_penalty(probs: np.ndarray, actions, node_positions: dict,
                            agent_pose, human_futures,
                            lambda_coll: float = 1.0, lambda_prox: float = 1.0,
                            r_coll: float = COLLISION_RADIUS,
                            r_s: float = SAFETY_RADIUS,
                            delta: float = DELTA_PENALTY,
                            eps: float = PROX_EPS,
                            dt: float = world.DEFAULT_DT,
                            speed: float = world.AGENT_SPEED) -> ExpectedPenalty:
    """Probability-weighted social cost of the action distribution.

    Executing a candidate takes the agent along its segment frame by frame;
    each human's forecast track runs on the same clock (constant velocity
    past the forecast horizon, so the whole traverse is covered). A human is
    scored once per action at the closest time-aligned approach: under
    r_coll it counts as one predicted contact, within r_s it adds the
    proximity kernel there. STOP scores the standing point against the raw
    forecast frames. Penalties are constants with respect to the policy, so
    the expectation is differentiable through the probabilities alone.
    """
    agent = np.asarray(agent_pose[:2], dtype=float)
    heading0 = float(agent_pose[2])
    K1 = len(actions)
    coll_parts = np.zeros(K1)
    prox_parts = np.zeros(K1)
    for i, action in enumerate(actions):
        if action == "stop":
            apath = None
            n_frames = 0
            heading = heading0
        else:
            b = np.asarray(node_positions[action], dtype=float)
            ab = b - agent
            length = float(np.hypot(ab[0], ab[1]))
            heading = math.atan2(ab[1], ab[0]) if length > 0.0 else heading0
            n_frames = max(1, int(math.ceil(length / (speed * dt) - 1e-9)))
            s = np.minimum(np.arange(1, n_frames + 1) * (speed * dt), length)
            apath = agent + (s / length)[:, None] * ab if length > 0.0 else \
                np.broadcast_to(agent, (n_frames, 2))
        contacts = 0
        d_close = []
        th_close = []
        for pts in human_futures:
            pts = np.asarray(pts, dtype=float).reshape(-1, 2)
            if apath is None:
                hpath = pts
                ap = np.broadcast_to(agent, hpath.shape)
            else:
                hpath = _extend_track(pts, n_frames, dt)
                ap = apath
            d_vecs = hpath - ap
            dists = np.linalg.norm(d_vecs, axis=1)
            j = int(np.argmin(dists))
            if dists[j] < r_coll:
                contacts += 1
            d_close.append(d_vecs[j])
            th_close.append(math.atan2(d_vecs[j, 1], d_vecs[j, 0]) - heading)
        coll_parts[i] = collision_loss(contacts, lambda_coll, delta)
        if d_close:
            prox_parts[i] = proximity_loss(d_close, th_close, lambda_prox,
                                           r_s, eps)
    penalties = coll_parts + prox_parts
    return ExpectedPenalty(
        value=float(probs @ penalties),
        coll=float(probs @ coll_parts),
        prox=float(probs @ prox_parts),
        penalties=penalties,
        coll_parts=coll_parts,
        prox_parts=prox_parts)


def anneal_weight(step: int, t_anneal: int) -> float:
    if t_anneal <= 0:
        return MIN_ANNEAL
    return max(MIN_ANNEAL, 1.0 - step / t_anneal)


@dataclass
class LossBreakdown:
    nav: float
    pose: float
    traj: float
    coll: float
    prox: float
    weight: float
    total: float

    def as_dict(self) -> dict:
        return {"nav": self.nav, "pose": self.pose, "traj": self.traj,
                "coll": self.coll, "prox": self.prox, "weight": self.weight,
                "total": self.total}


def total_loss(nav: float, pose: float, traj: float, coll: float, prox: float,
               step: int, t_anneal: int) -> LossBreakdown:
    """Joint objective: annealed forecasting terms plus social and imitation
    terms, total = w*(pose+traj) + coll + prox + nav."""
    w = anneal_weight(step, t_anneal)
    return LossBreakdown(nav=nav, pose=pose, traj=traj, coll=coll, prox=prox,
                         weight=w, total=w * (pose + traj) + coll + prox + nav)


def policy_logit_grad(probs: np.ndarray, expert_idx: int,
                      penalty: ExpectedPenalty) -> np.ndarray:
    """d(nav_loss + expected penalty)/d(logits)."""
    g = probs.copy()
    g[expert_idx] -= 1.0
    g += probs * (penalty.penalties - penalty.value)
    return g


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    seed: int = 0
    iterations: int = 150
    policy_lr: float = 1e-3
    forecaster_lr: float = 1e-4
    policy_seed: int = 7
    forecaster_seed: int = 11
    sigma: float = 0.0
    m_window: int = 6
    horizon: int = 3
    t_max: int = 50
    delta_th: float = DELTA_PENALTY
    lambda_coll: float = 1.0
    lambda_prox: float = 1.0
    gamma1: float = 0.5
    gamma2: float = 0.5
    anneal_frac: float = 0.5     # T_anneal = anneal_frac * iterations
    student_prob: float = 0.25
    warmup_frac: float = 0.2
    use_geo: bool = True
    use_sem: bool = True
    use_depth: bool = True
    use_objects: bool = True
    train_forecaster: bool = True
    nominal_depth: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return config_hash(self.to_dict())

    def runner(self, student_prob: float | None = None,
               interpreter: InterpreterConfig | None = None) -> RunnerConfig:
        return RunnerConfig(
            sigma=self.sigma, m_window=self.m_window, horizon=self.horizon,
            t_max=self.t_max, delta_th=self.delta_th, use_geo=self.use_geo,
            use_sem=self.use_sem, use_depth=self.use_depth,
            use_objects=self.use_objects, nominal_depth=self.nominal_depth,
            student_prob=self.student_prob if student_prob is None else student_prob,
            interpreter=interpreter or InterpreterConfig())


@dataclass
class TrainResult:
    models: Models
    curves: list                 # LossBreakdown per iteration
    config: TrainConfig


def init_models(cfg: TrainConfig) -> Models:
    return Models(policy=init_policy(cfg.policy_seed),
                  forecaster=fc.init_forecaster(cfg.forecaster_seed))


def train(cfg: TrainConfig, episodes, models: Models | None = None,
          interpreter: InterpreterConfig | None = None) -> TrainResult:
    """Imitation + social-penalty training over the episode list.

    One iteration = one rollout in mixed mode (teacher forced during warmup).
    Policy gradients are averaged over the episode's decisions and applied in
    a single adaptive step; the forecaster takes one step on the episode's
    tracked windows with the annealed learning rate.
    """
    if not episodes:
        raise ValueError("no training episodes")
    models = models or init_models(cfg)
    policy_opt = AdamState()
    forecaster_opt = AdamState()
    t_anneal = int(round(cfg.anneal_frac * cfg.iterations))
    warmup = int(round(cfg.warmup_frac * cfg.iterations))
    curves = []
    fields = {}
    for it in range(cfg.iterations):
        ep = episodes[it % len(episodes)]
        if ep.episode_id not in fields:
            fields[ep.episode_id] = world.distance_field(ep.wmap, ep.goal)
        student = 0.0 if it < warmup else cfg.student_prob
        records: list[DecisionRecord] = []
        navigate_episode(
            ep, models, mode="mixed", seed=cfg.seed ^ it,
            config=cfg.runner(student_prob=student, interpreter=interpreter),
            expert_field=fields[ep.episode_id],
            decision_hook=records.append)

        grads = zeros_like_tree(models.policy)
        nav_total = coll_total = prox_total = 0.0
        batch = []
        for rec in records:
            probs, cache = policy_forward(rec.inputs, models.policy)
            pen = expected_social_penalty(
                probs, rec.actions, rec.node_positions, rec.agent_pose,
                rec.human_futures, cfg.lambda_coll, cfg.lambda_prox)
            nav_total += nav_loss(probs, rec.expert_idx)
            coll_total += pen.coll
            prox_total += pen.prox
            dlogits = policy_logit_grad(probs, rec.expert_idx, pen)
            tree_add_(grads, policy_backward(cache, dlogits, models.policy))
            batch.extend(rec.forecaster_batch)
        n_dec = max(1, len(records))
        tree_scale_(grads, 1.0 / n_dec)
        policy_opt.update(models.policy, grads, cfg.policy_lr)

        w = anneal_weight(it, t_anneal)
        pose_l = traj_l = 0.0
        if batch:
            if cfg.train_forecaster:
                # anneal acts as a curriculum on the forecaster's step size
                pose_l, traj_l = fc.train_step(
                    models.forecaster, forecaster_opt, batch,
                    cfg.forecaster_lr * w,
                    gamma_pose=cfg.gamma1, gamma_traj=cfg.gamma2)
            else:
                pose_l, traj_l = fc.batch_losses(
                    models.forecaster, batch,
                    gamma_pose=cfg.gamma1, gamma_traj=cfg.gamma2)
        breakdown = total_loss(nav_total / n_dec, pose_l, traj_l,
                               coll_total / n_dec, prox_total / n_dec,
                               it, t_anneal)
        if not math.isfinite(breakdown.total):
            raise FloatingPointError(
                f"non-finite loss at iteration {it} on {ep.episode_id}: "
                f"{breakdown.as_dict()}")
        curves.append(breakdown)
    return TrainResult(models=models, curves=curves, config=cfg)


def synthetic_policy_case(seed: int = 0, n_nodes: int = 6, n_cands: int = 4,
                          n_tokens: int = 7):
    """Random but well-scaled scorer inputs for gradient diagnostics.

    Returns (inputs, expert_idx, penalties); penalties covers candidates+STOP.
    """
    gen = np.random.default_rng(seed)
    static = gen.normal(size=(n_nodes, 64)) / 4.0
    summary = gen.normal(size=(n_nodes, 128)) / 4.0
    pos = gen.uniform(0.0, 8.0, size=(n_nodes, 2))
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    inputs = PolicyInputs(
        static=static, summary=summary, dist=dist,
        cand_idx=np.arange(1, n_cands + 1), cur_idx=0,
        token_ids=tuple(int(t) for t in gen.integers(0, 1024, size=n_tokens)))
    expert_idx = int(gen.integers(0, n_cands + 1))
    penalties = gen.uniform(0.0, 4.0, size=n_cands + 1)
    return inputs, expert_idx, penalties


def synthetic_forecast_batch(seed: int = 0, n_tracks: int = 3, m: int = 6,
                             horizon: int = 3, dt: float = 0.25) -> list:
    """Random smooth (Track, TrackFuture) pairs for gradient diagnostics."""
    gen = np.random.default_rng(seed)
    batch = []
    for i in range(n_tracks):
        start = gen.uniform(-2.0, 2.0, size=2)
        vel = gen.uniform(-1.0, 1.0, size=2)
        ts = np.arange(m + horizon)[:, None] * dt
        pos = start + vel * ts + gen.normal(scale=0.05, size=(m + horizon, 2))
        kps = gen.uniform(0.0, 1.0, size=(m + horizon, 17, 3))
        track = Track(track_id=i, positions=pos[:m], keypoints=kps[:m],
                      steps=list(range(m)), dt=dt, truth_label="walking",
                      ped_id=i)
        future = fc.TrackFuture(
            positions=pos[m:],
            velocities=fc.gt_velocities(pos[m:], pos[m - 1], dt),
            keypoints=kps[m:])
        batch.append((track, future))
    return batch


def random_policy(seed: int = 0):
    """Policy params with every array (including the normally zero-started
    FFN output layer and biases) drawn small and random, so finite-difference
    probes see non-trivial gradients on every parameter."""
    from .optim import named_arrays
    params = init_policy(seed)
    gen = np.random.default_rng(seed + 1)
    for _, arr in named_arrays(params):
        if not arr.any():
            arr[...] = gen.uniform(-0.2, 0.2, size=arr.shape)
    return params


def policy_loss_value(inputs, params, expert_idx: int,
                      penalties: np.ndarray) -> float:
    """Scalar objective for gradient checking: imitation cross entropy plus
    the expectation of fixed per-action penalties."""
    probs, _ = policy_forward(inputs, params)
    return nav_loss(probs, expert_idx) + float(probs @ penalties)


def policy_grads(inputs, params, expert_idx: int, penalties: np.ndarray):
    probs, cache = policy_forward(inputs, params)
    g = probs.copy()
    g[expert_idx] -= 1.0
    g += probs * (penalties - float(probs @ penalties))
    return policy_backward(cache, g, params)


def _relu_masks(cache):
    z1, zpre = cache[2], cache[16]
    return (z1 > 0.0), (zpre > 0.0)


def _loss_and_masks(inputs, params, expert_idx, penalties):
    probs, cache = policy_forward(inputs, params)
    val = nav_loss(probs, expert_idx) + float(probs @ penalties)
    return val, _relu_masks(cache)


def policy_grad_check(inputs, params, expert_idx: int, penalties: np.ndarray,
                      n_probes: int = 20, h: float = 1e-4,
                      seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients
    of the policy objective over randomly probed parameter entries.

    The step is wider than textbook 1e-5 because many probed entries carry
    gradients near 1e-7; halving the step there trades negligible truncation
    error for a 10x larger roundoff term in (lp - lm). Probes whose +-h
    perturbation flips a ReLU unit on or off are redrawn: the difference
    quotient straddles a kink there, so it does not estimate the (correct)
    one-sided derivative the backward pass reports."""
    from .optim import named_arrays
    gen = np.random.default_rng(seed)
    grads = policy_grads(inputs, params, expert_idx, penalties)
    pairs = list(zip(named_arrays(params), named_arrays(grads)))
    _, masks0 = _loss_and_masks(inputs, params, expert_idx, penalties)
    worst = 0.0
    done = 0
    for _ in range(50 * n_probes):
        if done >= n_probes:
            break
        (name, arr), (_, g) = pairs[gen.integers(len(pairs))]
        idx = np.unravel_index(int(gen.integers(arr.size)), arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        lp, mp = _loss_and_masks(inputs, params, expert_idx, penalties)
        arr[idx] = orig - h
        lm, mm = _loss_and_masks(inputs, params, expert_idx, penalties)
        arr[idx] = orig
        if any(not np.array_equal(a, b)
               for trio in zip(masks0, mp, mm)
               for a, b in ((trio[0], trio[1]), (trio[0], trio[2]))):
            continue
        numeric = (lp - lm) / (2.0 * h)
        analytic = float(g[idx])
        # Same GRAD_FLOOR convention as the forecaster check: sub-microscale
        # entries sit below central-difference noise on an O(1) objective
        # and are compared absolutely rather than relatively.
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric),
                                            fc.GRAD_FLOOR)
        worst = max(worst, rel)
        done += 1
    if done < n_probes:
        raise RuntimeError(f"only {done}/{n_probes} probes away from "
                           "ReLU kinks; widen the parameter draw")
    return worst


def curves_to_csv(curves, digest: str) -> str:
    lines = [f"# config_hash={digest}",
             "iteration,nav,pose,traj,coll,prox,weight,total"]
    for i, c in enumerate(curves):
        lines.append(f"{i},{c.nav!r},{c.pose!r},{c.traj!r},{c.coll!r},"
                     f"{c.prox!r},{c.weight!r},{c.total!r}")
    return "\n".join(lines) + "\n"
