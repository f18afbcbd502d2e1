"""Benchmarks, navigation metrics, and ablation runs.

Six procedural map families (three seen, three unseen) produce episodes whose
pedestrians cross or crowd the shortest route, so social behavior is actually
exercised. Metrics follow the usual navigation conventions: navigation error,
collision-free success rate, episode collision rate, and contacts per episode.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import world
from .agent import Models, RunnerConfig, navigate_episode
from .train import TrainConfig, TrainResult, train
from .world import (Episode, EpisodeInvalid, GroupDiscuss, Instruction,
                    MapObject, NoPathError, Pace, Pedestrian, Stand, WalkPath,
                    WorldMap)

SUCCESS_RADIUS = 3.0   # m, matches the expert's stopping radius
EVAL_SEED = 1234       # evaluation rollouts share this stream across variants


class EmptyInput(ValueError):
    """Metrics over zero episodes are undefined."""


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    n: int
    ne: float    # mean final distance to goal, m
    sr: float    # fraction of episodes ending within radius with no contact
    cr: float    # fraction of episodes with at least one contact
    tcr: float   # mean contacts per episode
    split: str = ""
    tag: str = ""

    def as_dict(self) -> dict:
        return {"n": self.n, "ne": self.ne, "sr": self.sr, "cr": self.cr,
                "tcr": self.tcr, "split": self.split, "tag": self.tag}


def compute_metrics(final_dists, event_counts, delta: float = SUCCESS_RADIUS,
                    split: str = "", tag: str = "") -> MetricsReport:
    """Aggregate per-episode outcomes.

    Success requires both ending strictly within delta of the goal and
    touching no pedestrian on the way; the collision rate counts episodes
    with any contact, and tcr averages the raw contact count.
    """
    d = np.asarray(final_dists, dtype=float)
    e = np.asarray(event_counts, dtype=float)
    if d.size == 0:
        raise EmptyInput("no episodes")
    if d.shape != e.shape or d.ndim != 1:
        raise ValueError("final_dists and event_counts must be equal-length 1-D")
    n = d.size
    return MetricsReport(
        n=int(n),
        ne=float(d.mean()),
        sr=float(((d < delta) & (e == 0)).mean()),
        cr=float((e > 0).mean()),
        tcr=float(e.mean()),
        split=split, tag=tag)


def metrics_from_logs(logs, delta: float = SUCCESS_RADIUS, split: str = "",
                      tag: str = "") -> MetricsReport:
    dists = [float(np.hypot(l.final_position[0] - l.goal[0],
                            l.final_position[1] - l.goal[1])) for l in logs]
    events = [l.n_events for l in logs]
    return compute_metrics(dists, events, delta, split=split, tag=tag)


# ---------------------------------------------------------------------------
# evaluation rollouts


def _episode_seed(seed: int, index: int) -> int:
    return (seed * 1000003 + index) % (2 ** 31)


def _eval_chunk(args):
    models, episodes, cfg, seed, offset = args
    return [navigate_episode(ep, models, mode="greedy",
                             seed=_episode_seed(seed, offset + i), config=cfg)
            for i, ep in enumerate(episodes)]


def evaluate(models: Models, episodes, config: RunnerConfig | None = None,
             seed: int = EVAL_SEED, workers: int = 1, tag: str = ""):
    """Greedy rollouts over the episode list.

    Returns (MetricsReport, [EpisodeLog]). Per-episode seeds depend only on
    (seed, index), so the result is identical for any worker count.
    """
    cfg = config or RunnerConfig()
    if workers <= 1 or len(episodes) < 2:
        logs = _eval_chunk((models, episodes, cfg, seed, 0))
    else:
        workers = min(workers, len(episodes))
        bounds = np.linspace(0, len(episodes), workers + 1).astype(int)
        chunks = [(models, episodes[a:b], cfg, seed, int(a))
                  for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        logs = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_eval_chunk, chunks):
                logs.extend(part)
    splits = {ep.split for ep in episodes}
    split = splits.pop() if len(splits) == 1 else "mixed"
    return metrics_from_logs(logs, cfg.delta_th, split=split, tag=tag), logs


# ---------------------------------------------------------------------------
# benchmark generation

_SEEN_FAMILIES = ("corridor", "room", "lounge")
_UNSEEN_FAMILIES = ("l_corridor", "pillar_hall", "double_room")

_TEMPLATES = (
    ("reach", "Go to the {goal} and stop."),
    ("approach", "Make your way to the {goal}, then stop."),
    ("navigate", "Head over to the {goal} and wait there."),
)
_PED_CLAUSES = (
    "Watch for a person {activity} nearby.",
    "You will pass someone {activity}.",
    "There is a person {activity} on the way.",
)


def _mover_profile(rng) -> tuple:
    """(activity word, speed) consistent with how the body actually moves."""
    r = rng.uniform()
    if r < 0.25:
        return "strolling", float(rng.uniform(0.4, 0.6))
    if r < 0.85:
        return "walking", float(rng.uniform(0.9, 1.2))
    return "jogging", float(rng.uniform(1.4, 1.7))


def _instruction(rng, goal_label: str, activities) -> Instruction:
    tid, base = _TEMPLATES[rng.integers(len(_TEMPLATES))]
    parts = [base.format(goal=goal_label)]
    for act in activities:
        clause = _PED_CLAUSES[rng.integers(len(_PED_CLAUSES))]
        parts.append(clause.format(activity=act))
    return Instruction(template_id=tid,
                       slots={"goal": goal_label, "activities": list(activities)},
                       text=" ".join(parts))


def _goal_object(wmap: WorldMap, goal, label: str) -> MapObject:
    gx, gy = float(goal[0]), float(goal[1])
    for off in ((0.4, 0.0), (-0.4, 0.0), (0.0, 0.4), (0.0, -0.4), (0.0, 0.0)):
        p = (gx + off[0], gy + off[1])
        if wmap.is_free(p):
            return MapObject("goal-mark", label, p)
    return MapObject("goal-mark", label, (gx, gy))


def _corridor(rng):
    L = float(rng.uniform(10.0, 13.0))
    W = float(rng.uniform(3.0, 4.0))
    bench_x = float(rng.uniform(4.0, L - 5.0))
    obstacles = [(bench_x, 0.0, bench_x + 1.2, 0.45)]
    yc = W / 2.0
    start = (1.0, yc + float(rng.uniform(-0.3, 0.3)), 0.0)
    goal = (L - 1.0, yc + float(rng.uniform(-0.3, 0.3)))
    act, speed = _mover_profile(rng)
    y1 = yc + float(rng.uniform(-0.4, 0.4))
    y2 = yc + float(rng.uniform(-0.4, 0.4))
    peds = [Pedestrian(0, Pace((L - 1.5, y1), (1.5, y2), speed), act)]
    stand_y = 0.8 if rng.uniform() < 0.5 else W - 0.8
    peds.append(Pedestrian(1, Stand((bench_x + 2.0, stand_y),
                                    heading=float(rng.uniform(-np.pi, np.pi))),
                           "standing"))
    objects = [MapObject("obj-0", "extinguisher", (2.0, 0.3)),
               MapObject("obj-1", "bench", (bench_x + 0.6, 0.75))]
    return WorldMap((0, 0, L, W), obstacles, objects), start, goal, peds, "door"


def _room(rng):
    S = float(rng.uniform(7.5, 9.0))
    tx = S / 2.0 + float(rng.uniform(-0.5, 0.5))
    ty = S / 2.0 + float(rng.uniform(-0.5, 0.5))
    obstacles = [(tx - 0.8, ty - 0.5, tx + 0.8, ty + 0.5)]
    start = (0.9, 0.9, float(np.arctan2(S - 1.8, S - 1.8)))
    goal = (S - 0.9, S - 0.9)
    act, speed = _mover_profile(rng)
    peds = [Pedestrian(0, Pace((S - 1.6, 1.3), (1.3, S - 1.6), speed), act),
            Pedestrian(1, GroupDiscuss((tx, ty + 1.6), 0.55, 0), "discussing"),
            Pedestrian(2, GroupDiscuss((tx, ty + 1.6), 0.55, 3), "discussing")]
    objects = [MapObject("obj-0", "chair", (tx - 1.3, ty - 0.9)),
               MapObject("obj-1", "plant", (0.5, S - 0.5)),
               MapObject("obj-2", "shelf", (S - 0.5, 0.5))]
    return WorldMap((0, 0, S, S), obstacles, objects), start, goal, peds, "window"


def _lounge(rng):
    L, W = 10.0, 8.0
    sofa_y = float(rng.uniform(5.8, 6.6))
    obstacles = [(2.0, sofa_y, 4.4, sofa_y + 0.8),
                 (6.2, 1.2, 7.0, 3.0)]
    start = (0.8, float(rng.uniform(1.0, 2.0)), 0.0)
    goal = (L - 0.9, float(rng.uniform(5.5, 7.0)))
    act, speed = _mover_profile(rng)
    loop = WalkPath(((1.5, 4.2), (5.2, 4.6), (8.5, 4.0), (5.2, 3.4)),
                    speed, loop=True)
    peds = [Pedestrian(0, loop, act),
            Pedestrian(1, Stand((3.2, sofa_y - 0.7), heading=1.6), "standing")]
    objects = [MapObject("obj-0", "sofa", (3.2, sofa_y - 0.3)),
               MapObject("obj-1", "lamp", (9.4, 0.6)),
               MapObject("obj-2", "television", (0.6, 7.4))]
    return WorldMap((0, 0, L, W), obstacles, objects), start, goal, peds, "doorway"


def _l_corridor(rng):
    S = 12.0
    Wc = float(rng.uniform(3.2, 4.0))
    obstacles = [(Wc, Wc, S, S)]
    start = (float(rng.uniform(1.0, Wc - 1.0)), S - 1.0, -np.pi / 2.0)
    goal = (S - 1.0, float(rng.uniform(1.0, Wc - 1.0)))
    act, speed = _mover_profile(rng)
    mid = Wc / 2.0
    path = WalkPath(((S - 1.5, mid), (mid, mid), (mid, S - 1.5)), speed)
    peds = [Pedestrian(0, path, act),
            Pedestrian(1, Stand((Wc - 0.6, 0.7), heading=2.4), "standing")]
    objects = [MapObject("obj-0", "cabinet", (0.5, 0.6)),
               MapObject("obj-1", "noticeboard", (0.5, S - 0.6))]
    return WorldMap((0, 0, S, S), obstacles, objects), start, goal, peds, "exit"


def _pillar_hall(rng):
    S = 10.0
    pillars = []
    for px, py in ((3.0, 3.0), (7.0, 3.0), (3.0, 7.0), (7.0, 7.0)):
        cx = px + float(rng.uniform(-0.4, 0.4))
        cy = py + float(rng.uniform(-0.4, 0.4))
        pillars.append((cx - 0.3, cy - 0.3, cx + 0.3, cy + 0.3))
    start = (0.9, float(rng.uniform(4.2, 5.8)), 0.0)
    goal = (S - 0.9, float(rng.uniform(4.2, 5.8)))
    act, speed = _mover_profile(rng)
    cross_x = float(rng.uniform(4.4, 5.6))
    peds = [Pedestrian(0, Pace((cross_x, 1.2), (cross_x, S - 1.2), speed), act),
            Pedestrian(1, Pace((1.8, 1.8), (S - 1.8, S - 1.8),
                               float(rng.uniform(0.9, 1.2))), "pacing"),
            Pedestrian(2, Stand((5.0, 8.8), heading=-1.6), "standing")]
    objects = [MapObject("obj-0", "statue", (5.0, 0.6)),
               MapObject("obj-1", "fountain", (0.6, 9.4))]
    return WorldMap((0, 0, S, S), pillars, objects), start, goal, peds, "archway"


def _double_room(rng):
    L, W = 12.0, 6.0
    door_c = float(rng.uniform(2.2, 3.8))
    half = 0.6
    obstacles = []
    if door_c - half > 0.0:
        obstacles.append((5.9, 0.0, 6.1, door_c - half))
    if door_c + half < W:
        obstacles.append((5.9, door_c + half, 6.1, W))
    start = (1.0, float(rng.uniform(1.0, W - 1.0)), 0.0)
    goal = (L - 1.0, float(rng.uniform(1.0, W - 1.0)))
    act, speed = _mover_profile(rng)
    peds = [Pedestrian(0, Pace((4.4, door_c), (7.6, door_c), speed), act),
            Pedestrian(1, GroupDiscuss((9.0, 1.4), 0.55, 1), "discussing"),
            Pedestrian(2, GroupDiscuss((9.0, 1.4), 0.55, 4), "discussing")]
    objects = [MapObject("obj-0", "table", (2.5, W - 0.7)),
               MapObject("obj-1", "door", (6.0, door_c)),
               MapObject("obj-2", "window", (L - 0.5, W - 0.6))]
    return WorldMap((0, 0, L, W), obstacles, objects), start, goal, peds, "window"


_FAMILY_BUILDERS = {
    "corridor": _corridor, "room": _room, "lounge": _lounge,
    "l_corridor": _l_corridor, "pillar_hall": _pillar_hall,
    "double_room": _double_room,
}


def benchmark_families(split: str) -> tuple:
    if split == "seen":
        return _SEEN_FAMILIES
    if split == "unseen":
        return _UNSEEN_FAMILIES
    raise ValueError(f"unknown split {split!r} (expected 'seen' or 'unseen')")


def generate_benchmark(n: int, split: str, seed: int = 0,
                       max_tries: int = 60) -> list:
    """n validated episodes cycling through the split's map families."""
    families = benchmark_families(split)
    root = np.random.SeedSequence([seed, 0 if split == "seen" else 1])
    episodes = []
    for i, child in enumerate(root.spawn(n)):
        rng = np.random.default_rng(child)
        family = families[i % len(families)]
        build = _FAMILY_BUILDERS[family]
        ep = None
        for _ in range(max_tries):
            try:
                wmap, start, goal, peds, goal_label = build(rng)
                wmap.objects.append(_goal_object(wmap, goal, goal_label))
                acts = sorted({p.activity for p in peds})
                candidate = Episode(
                    episode_id=f"{split}-{i:04d}",
                    wmap=wmap, start=start, goal=goal, pedestrians=peds,
                    instruction=_instruction(rng, goal_label, acts),
                    split=split, seed=int(rng.integers(2 ** 31)))
                world.validate_episode(candidate)
            except (EpisodeInvalid, NoPathError, ValueError):
                continue
            ep = candidate
            break
        if ep is None:
            raise EpisodeInvalid(f"{split}-{i:04d}: no valid layout for "
                                 f"{family} after {max_tries} tries")
        episodes.append(ep)
    return episodes


# ---------------------------------------------------------------------------
# ablations


@dataclass
class Variant:
    """A named training/evaluation configuration delta."""
    name: str
    train_overrides: dict
    eval_overrides: dict = dataclasses.field(default_factory=dict)


# Named feature toggles. Each maps onto training-config fields, so a toggled
# variant is trained and evaluated with the feature off; rgb_only replaces
# measured depth by a fixed nominal depth both in the static features and in
# detection back-projection.
TOGGLES = {
    "geo_off": {"use_geo": False},
    "sem_off": {"use_sem": False},
    "coll_off": {"lambda_coll": 0.0},
    "prox_off": {"lambda_prox": 0.0},
    "rgb_only": {"use_depth": False, "nominal_depth": 2.5},
    "depth_only": {"use_objects": False},
    "past_oriented": {"train_forecaster": False},
}


def variant_from_toggles(toggles) -> Variant:
    overrides = {}
    for t in toggles:
        if t not in TOGGLES:
            raise ValueError(f"unknown toggle {t!r}; choose from "
                             f"{sorted(TOGGLES)}")
        overrides.update(TOGGLES[t])
    return Variant("+".join(toggles) if toggles else "full", overrides)


STANDARD_VARIANTS = (
    Variant("full", {}),
    Variant("no_social", {"lambda_coll": 0.0, "lambda_prox": 0.0}),
    Variant("sem_off", TOGGLES["sem_off"]),
    Variant("geo_off", TOGGLES["geo_off"]),
    Variant("coll_off", TOGGLES["coll_off"]),
    Variant("prox_off", TOGGLES["prox_off"]),
    Variant("rgb_only", TOGGLES["rgb_only"]),
    Variant("depth_only", TOGGLES["depth_only"]),
    Variant("past_oriented", TOGGLES["past_oriented"]),
)


@dataclass
class AblationRow:
    variant: str
    seed: int
    report: MetricsReport


@dataclass
class AblationResult:
    rows: list
    medians: dict      # variant -> metric -> median over seeds
    elapsed_s: float

    def median(self, variant: str, metric: str) -> float:
        return self.medians[variant][metric]


def _with_overrides(cfg: TrainConfig, overrides: dict, seed_shift: int) -> TrainConfig:
    cfg = dataclasses.replace(cfg, **overrides)
    return dataclasses.replace(
        cfg,
        seed=cfg.seed + 7919 * seed_shift,
        policy_seed=cfg.policy_seed + seed_shift,
        forecaster_seed=cfg.forecaster_seed + seed_shift)


def run_ablation(base_cfg: TrainConfig, train_episodes, eval_episodes,
                 variants=STANDARD_VARIANTS, seeds=(0, 1, 2),
                 workers: int = 1, interpreter=None) -> AblationResult:
    """Train/evaluate each variant under matched seeds and a shared benchmark.

    Variants that share identical training overrides reuse the same trained
    model within a seed, so purely observational ablations (a feature toggled
    off at evaluation time) are judged on the very same parameters.
    """
    import time
    t0 = time.perf_counter()
    rows = []
    for shift in seeds:
        trained = {}
        for var in variants:
            key = tuple(sorted(var.train_overrides.items()))
            if key not in trained:
                cfg = _with_overrides(base_cfg, var.train_overrides, shift)
                trained[key] = train(cfg, train_episodes,
                                     interpreter=interpreter)
            result: TrainResult = trained[key]
            runner = result.config.runner(student_prob=0.0,
                                          interpreter=interpreter)
            runner = dataclasses.replace(runner, **var.eval_overrides)
            report, _ = evaluate(result.models, eval_episodes, runner,
                                 seed=EVAL_SEED, workers=workers,
                                 tag=var.name)
            rows.append(AblationRow(var.name, shift, report))
    medians = {}
    for var in variants:
        per_metric = {}
        for metric in ("ne", "sr", "cr", "tcr"):
            vals = [getattr(r.report, metric) for r in rows
                    if r.variant == var.name]
            per_metric[metric] = float(np.median(vals))
        medians[var.name] = per_metric
    return AblationResult(rows=rows, medians=medians,
                          elapsed_s=time.perf_counter() - t0)


def ablation_markdown(result: AblationResult, digest: str = "") -> str:
    lines = []
    if digest:
        lines.append(f"<!-- config_hash={digest} -->")
    lines += ["| variant | NE (m) | SR | CR | TCR |",
              "|---|---|---|---|---|"]
    for name, m in result.medians.items():
        lines.append(f"| {name} | {m['ne']:.3f} | {m['sr']:.3f} "
                     f"| {m['cr']:.3f} | {m['tcr']:.3f} |")
    return "\n".join(lines) + "\n"


def metrics_csv(rows, digest: str = "") -> str:
    lines = []
    if digest:
        lines.append(f"# config_hash={digest}")
    lines.append("variant,seed,split,n,ne,sr,cr,tcr")
    for r in rows:
        m = r.report
        lines.append(f"{r.variant},{r.seed},{m.split},{m.n},{m.ne!r},{m.sr!r},"
                     f"{m.cr!r},{m.tcr!r}")
    return "\n".join(lines) + "\n"
