"""Episode navigation loop.

Observe a panorama, propose waypoints, pause to track humans when any are
detected, forecast and describe them, fold everything into the topological
graph, score candidates + STOP, and act. The loop is deterministic given the
episode and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import forecast as fc
from . import perception, semantic, topo, world

T_MAX = 50          # decision budget per episode
DELTA_TH = 3.0      # m, goal radius for expert STOP and success


class ExpertNotAvailable(Exception):
    """No candidate reaches the goal and the goal is not within stopping range."""


@dataclass
class Models:
    policy: topo.PolicyParams
    forecaster: fc.ForecasterParams


@dataclass
class RunnerConfig:
    sigma: float = 0.0           # observation noise, m
    m_window: int = perception.WINDOW_STEPS
    horizon: int = fc.HORIZON
    t_max: int = T_MAX
    delta_th: float = DELTA_TH
    use_geo: bool = True         # geometric human features into the graph
    use_sem: bool = True         # semantic human features into the graph
    use_depth: bool = True       # depth block of static features
    use_objects: bool = True     # object histogram block of static features
    nominal_depth: float | None = None  # rgb-only ablation depth substitute
    student_prob: float = 0.25   # mixed mode: chance of executing a sampled action
    interpreter: semantic.InterpreterConfig = field(
        default_factory=semantic.InterpreterConfig)


@dataclass
class DecisionRecord:
    """Everything the trainer needs to redo and differentiate one decision."""
    index: int
    inputs: topo.PolicyInputs
    actions: list
    probs: np.ndarray
    agent_pose: np.ndarray
    node_positions: dict
    human_futures: list       # (horizon, 2) world-frame forecast per tracked human
    expert_idx: int | None
    forecaster_batch: list    # (Track, TrackFuture) pairs


@dataclass
class StepRecord:
    index: int
    pose: tuple
    action: object            # node id or "stop"
    entropy: float
    n_detections: int
    n_tracks: int
    events: list


@dataclass
class EpisodeLog:
    episode_id: str
    seed: int
    mode: str
    steps: list
    final_position: tuple
    goal: tuple
    termination: str          # "stop", "goal", or "budget"
    n_events: int
    forecast_calls: int
    interpret_calls: int


def expert_action_index(actions, graph: topo.TopoGraph, dist_field, wmap,
                        agent_pos, goal, delta_th: float = DELTA_TH) -> int:
    """Index of the geodesic-greedy action: STOP inside the goal radius,
    otherwise the candidate closest to the goal through free space."""
    if float(np.linalg.norm(np.asarray(goal) - np.asarray(agent_pos))) < delta_th:
        return len(actions) - 1
    best = None
    for i, action in enumerate(actions[:-1]):
        d = world.field_lookup(dist_field, wmap, graph.nodes[action].position)
        if math.isfinite(d) and (best is None or d < best[0]):
            best = (d, i)
    if best is None:
        raise ExpertNotAvailable("no reachable candidate and goal out of range")
    return best[1]


def _entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0.0]
    return float(-np.sum(p * np.log(p)))


def _gt_futures(state: world.SimState, pedestrians, window, intr, horizon: int):
    """Bookkeeping futures per track: exact positions and keypoints for the
    next `horizon` frames, agent-centric in the frozen window pose."""
    by_id = {p.ped_id: p for p in pedestrians}
    futures = {}
    for tid, track in window.tracks.items():
        ped = by_id.get(track.ped_id)
        if ped is None:
            continue
        pos = np.zeros((horizon, 2))
        kps = np.zeros((horizon, 17, 3))
        for k in range(1, horizon + 1):
            st = world.pedestrian_state_at(ped.script, state.t + k, state.dt)
            pos[k - 1] = perception.agent_frame(window.agent, st.position)
            skel = world.skeleton_at(st.position, st.heading, st.phase, ped.body_scale)
            sector = perception.sector_of_bearing(
                math.atan2(pos[k - 1][1], pos[k - 1][0]))
            bearing = sector * perception.SECTOR_WIDTH
            for j in range(17):
                krel = perception.agent_frame(window.agent, skel[j, :2])
                try:
                    ku, kv, _ = perception.project(
                        krel, intr, bearing,
                        height=perception._JOINT_HEIGHTS[j] * ped.body_scale)
                except perception.NonPositiveDepth:
                    ku, kv = intr.cx, intr.cy
                kps[k - 1, j] = (ku / intr.width, kv / intr.height, 1.0)
        vel = fc.gt_velocities(pos, track.positions[-1], state.dt)
        futures[tid] = fc.TrackFuture(positions=pos, velocities=vel, keypoints=kps)
    return futures


def navigate_episode(episode: world.Episode, models: Models, mode: str = "greedy",
                     seed: int = 0, config: RunnerConfig | None = None,
                     expert_field: np.ndarray | None = None,
                     decision_hook=None,
                     intr: perception.CameraIntrinsics = perception.DEFAULT_INTRINSICS
                     ) -> EpisodeLog:
    """Run one episode to termination.

    mode: "greedy" (argmax), "sample" (draw from the distribution), "expert"
    (geodesic-greedy supervision), or "mixed" (expert with student_prob chance
    of executing a sampled action; used during training).
    decision_hook receives a DecisionRecord per decision step.
    """
    cfg = config or RunnerConfig()
    wmap = episode.wmap
    peds = episode.pedestrians
    goal = np.asarray(episode.goal, dtype=float)
    ss = np.random.SeedSequence(seed)
    obs_rng, act_rng = (np.random.default_rng(c) for c in ss.spawn(2))

    needs_expert = mode in ("expert", "mixed") or decision_hook is not None
    if needs_expert and expert_field is None:
        expert_field = world.distance_field(wmap, goal)

    state = world.initial_state(episode)
    graph = topo.TopoGraph()
    tokens = topo.InstructionTokens.from_text(episode.instruction.text)
    fusion = models.policy.fusion
    steps = []
    n_events = 0
    forecast_calls = 0
    interpret_calls = 0
    termination = "budget"

    for index in range(cfg.t_max):
        obs = perception.observe(state, wmap, peds, intr, sigma=cfg.sigma,
                                 rng=obs_rng, nominal_depth=cfg.nominal_depth)
        n_detections = sum(len(s.detections) for s in obs.sectors)
        sector_feats = [perception.static_sector_feature(
            s, use_depth=cfg.use_depth, use_objects=cfg.use_objects)
            for s in obs.sectors]
        current_static = np.mean(np.stack(sector_feats), axis=0)
        candidates = world.waypoint_candidates(wmap, state.agent)
        cand_feats = [sector_feats[c.sector] for c in candidates]
        active = topo.update_graph(graph, state.agent, candidates, cand_feats,
                                   current_static, fusion, index)

        events = []
        human_futures = []
        forecaster_batch = []
        n_tracks = 0
        if n_detections > 0:
            window, state, pause_events = perception.collect_window(
                state, wmap, peds, intr, m=cfg.m_window, sigma=cfg.sigma,
                rng=obs_rng, nominal_depth=cfg.nominal_depth)
            events.extend(pause_events)
            n_tracks = len(window.tracks)
            futures = (_gt_futures(state, peds, window, intr, cfg.horizon)
                       if decision_hook is not None else {})
            humans = []
            for tid, track in window.tracks.items():
                fcast, geo = fc.forecast_track(track, models.forecaster, cfg.horizon)
                forecast_calls += 1
                if cfg.use_sem:
                    desc = semantic.interpret(track, cfg.interpreter)
                    interpret_calls += 1
                    sem = semantic.encode_text(desc.text)
                else:
                    sem = np.zeros(topo.HUMAN_DIM)
                geo_feat = geo if cfg.use_geo else np.zeros(topo.HUMAN_DIM)
                world_pos = perception.agent_to_world(
                    window.agent, track.positions[-1])
                humans.append((tid, world_pos, geo_feat, sem))
                human_futures.append(np.stack([
                    perception.agent_to_world(window.agent, p)
                    for p in fcast.positions]))
                if tid in futures:
                    forecaster_batch.append((track, futures[tid]))
            topo.assign_humans(graph, humans, fusion,
                               node_ids=[graph.current_id] + active)

        inputs = topo.graph_inputs(graph, active, tokens)
        probs, _ = topo.policy_forward(inputs, models.policy)
        actions = list(active) + ["stop"]

        expert_idx = None
        if needs_expert:
            try:
                expert_idx = expert_action_index(
                    actions, graph, expert_field, wmap, state.agent[:2], goal,
                    cfg.delta_th)
            except ExpertNotAvailable:
                expert_idx = len(actions) - 1

        if decision_hook is not None:
            decision_hook(DecisionRecord(
                index=index, inputs=inputs, actions=actions, probs=probs,
                agent_pose=state.agent.copy(),
                node_positions={a: graph.nodes[a].position.copy()
                                for a in active},
                human_futures=human_futures, expert_idx=expert_idx,
                forecaster_batch=forecaster_batch))

        if mode == "greedy":
            choice = int(np.argmax(probs))
        elif mode == "sample":
            choice = int(act_rng.choice(len(actions), p=probs))
        elif mode == "expert":
            choice = expert_idx
        elif mode == "mixed":
            if act_rng.uniform() < cfg.student_prob:
                choice = int(act_rng.choice(len(actions), p=probs))
            else:
                choice = expert_idx
        else:
            raise ValueError(f"unknown mode {mode!r}")

        action = actions[choice]
        if action == "stop":
            steps.append(StepRecord(index, tuple(state.agent), "stop",
                                    _entropy(probs), n_detections, n_tracks,
                                    events))
            n_events += len(events)
            termination = "stop"
            break

        target = graph.nodes[action].position
        state, move_events = world.step_agent(state, peds, target)
        events.extend(move_events)
        graph.set_current(action)
        steps.append(StepRecord(index, tuple(state.agent), int(action),
                                _entropy(probs), n_detections, n_tracks,
                                events))
        n_events += len(events)
        if float(np.linalg.norm(state.agent[:2] - goal)) < cfg.delta_th:
            termination = "goal"   # logged only; success is judged by metrics
            break

    return EpisodeLog(
        episode_id=episode.episode_id,
        seed=seed,
        mode=mode,
        steps=steps,
        final_position=(float(state.agent[0]), float(state.agent[1])),
        goal=(float(goal[0]), float(goal[1])),
        termination=termination,
        n_events=n_events,
        forecast_calls=forecast_calls,
        interpret_calls=interpret_calls)


# ---------------------------------------------------------------------------
# log serialization (JSON lines, stable field order, content hash)


def log_to_dict(log: EpisodeLog) -> dict:
    return {
        "episode_id": log.episode_id,
        "seed": log.seed,
        "mode": log.mode,
        "steps": [
            {
                "index": s.index,
                "pose": [round(float(v), 9) for v in s.pose],
                "action": s.action,
                "entropy": round(float(s.entropy), 9),
                "n_detections": s.n_detections,
                "n_tracks": s.n_tracks,
                "events": [[int(e.step), int(e.ped_id)] for e in s.events],
            }
            for s in log.steps
        ],
        "final_position": [round(float(v), 9) for v in log.final_position],
        "goal": [round(float(v), 9) for v in log.goal],
        "termination": log.termination,
        "n_events": log.n_events,
        "forecast_calls": log.forecast_calls,
        "interpret_calls": log.interpret_calls,
    }


def log_from_dict(d: dict) -> EpisodeLog:
    steps = [StepRecord(
        index=s["index"], pose=tuple(s["pose"]), action=s["action"],
        entropy=s["entropy"], n_detections=s["n_detections"],
        n_tracks=s["n_tracks"],
        events=[world.CollisionEvent(step=e[0], ped_id=e[1]) for e in s["events"]])
        for s in d["steps"]]
    return EpisodeLog(
        episode_id=d["episode_id"], seed=d["seed"], mode=d["mode"], steps=steps,
        final_position=tuple(d["final_position"]), goal=tuple(d["goal"]),
        termination=d["termination"], n_events=d["n_events"],
        forecast_calls=d["forecast_calls"], interpret_calls=d["interpret_calls"])
