"""File formats: scenario JSON, model checkpoints, and episode-log JSONL.

The scenario format is strict by design: unknown fields are rejected so a
typo in a hand-written file fails loudly instead of silently changing the
world. All writers are atomic and deterministic (canonical JSON, sorted
keys), so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import io
import json

import numpy as np

from . import forecast as fc
from . import topo
from .agent import EpisodeLog, Models, log_from_dict, log_to_dict
from .optim import named_arrays
from .util import (atomic_write_bytes, atomic_write_text, canonical_json,
                   config_hash, content_hash)
from .world import (Episode, GroupDiscuss, Instruction, MapObject, Pace,
                    Pedestrian, Stand, WalkPath, WorldMap)

SCENARIO_VERSION = 1


class ScenarioError(ValueError):
    """Malformed scenario file."""


def _expect_keys(d: dict, where: str, required, optional=()):
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: expected an object")
    missing = [k for k in required if k not in d]
    if missing:
        raise ScenarioError(f"{where}: missing fields {missing}")
    unknown = [k for k in d if k not in required and k not in optional]
    if unknown:
        raise ScenarioError(f"{where}: unknown fields {unknown}")


def _floats(seq, where: str, n: int | None = None) -> list:
    try:
        out = [float(v) for v in seq]
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: expected numbers") from exc
    if n is not None and len(out) != n:
        raise ScenarioError(f"{where}: expected {n} numbers, got {len(out)}")
    return out


# ---------------------------------------------------------------------------
# scripts


def script_to_dict(script) -> dict:
    if isinstance(script, Stand):
        return {"kind": "stand", "position": list(script.position),
                "heading": script.heading}
    if isinstance(script, Pace):
        return {"kind": "pace", "a": list(script.a), "b": list(script.b),
                "speed": script.speed}
    if isinstance(script, WalkPath):
        return {"kind": "walk", "points": [list(p) for p in script.points],
                "speed": script.speed, "loop": script.loop}
    if isinstance(script, GroupDiscuss):
        return {"kind": "group", "center": list(script.center),
                "radius": script.radius, "member_index": script.member_index}
    raise ScenarioError(f"unknown script type {type(script).__name__}")


def script_from_dict(d: dict, where: str):
    kind = d.get("kind")
    if kind == "stand":
        _expect_keys(d, where, ("kind", "position"), ("heading",))
        return Stand(position=tuple(_floats(d["position"], where, 2)),
                     heading=float(d.get("heading", 0.0)))
    if kind == "pace":
        _expect_keys(d, where, ("kind", "a", "b", "speed"))
        return Pace(a=tuple(_floats(d["a"], where, 2)),
                    b=tuple(_floats(d["b"], where, 2)),
                    speed=float(d["speed"]))
    if kind == "walk":
        _expect_keys(d, where, ("kind", "points", "speed"), ("loop",))
        pts = d["points"]
        if not isinstance(pts, list) or len(pts) < 2:
            raise ScenarioError(f"{where}: walk needs at least two points")
        return WalkPath(points=tuple(tuple(_floats(p, where, 2)) for p in pts),
                        speed=float(d["speed"]), loop=bool(d.get("loop", False)))
    if kind == "group":
        _expect_keys(d, where, ("kind", "center", "radius", "member_index"))
        return GroupDiscuss(center=tuple(_floats(d["center"], where, 2)),
                            radius=float(d["radius"]),
                            member_index=int(d["member_index"]))
    raise ScenarioError(f"{where}: unknown script kind {kind!r}")


# ---------------------------------------------------------------------------
# episodes


def episode_to_dict(ep: Episode) -> dict:
    wmap = ep.wmap
    return {
        "map": {
            "bounds": list(wmap.bounds),
            "obstacles": [list(ob) for ob in wmap.obstacles],
            "objects": [{"id": o.object_id, "label": o.label,
                         "position": list(o.position)} for o in wmap.objects],
            "res": wmap.res,
        },
        "pedestrians": [{"id": p.ped_id,
                         "script": script_to_dict(p.script),
                         "activity": p.activity,
                         "body_scale": p.body_scale} for p in ep.pedestrians],
        "episode": {
            "id": ep.episode_id,
            "start": [float(v) for v in ep.start],
            "goal": [float(v) for v in ep.goal],
            "instruction": {"template": ep.instruction.template_id,
                            "slots": ep.instruction.slots,
                            "text": ep.instruction.text},
            "split": ep.split,
            "seed": ep.seed,
        },
    }


def episode_from_dict(d: dict, where: str = "scenario") -> Episode:
    _expect_keys(d, where, ("map", "pedestrians", "episode"))
    m = d["map"]
    _expect_keys(m, f"{where}.map", ("bounds", "obstacles", "objects"), ("res",))
    objects = []
    for i, o in enumerate(m["objects"]):
        _expect_keys(o, f"{where}.map.objects[{i}]", ("id", "label", "position"))
        objects.append(MapObject(str(o["id"]), str(o["label"]),
                                 tuple(_floats(o["position"],
                                               f"{where}.map.objects[{i}]", 2))))
    try:
        wmap = WorldMap(_floats(m["bounds"], f"{where}.map.bounds", 4),
                        [tuple(_floats(ob, f"{where}.map.obstacles", 4))
                         for ob in m["obstacles"]],
                        objects, res=float(m.get("res", 0.1)))
    except ValueError as exc:
        raise ScenarioError(f"{where}.map: {exc}") from exc
    peds = []
    for i, p in enumerate(d["pedestrians"]):
        pw = f"{where}.pedestrians[{i}]"
        _expect_keys(p, pw, ("id", "script", "activity"), ("body_scale",))
        peds.append(Pedestrian(ped_id=int(p["id"]),
                               script=script_from_dict(p["script"], pw),
                               activity=str(p["activity"]),
                               body_scale=float(p.get("body_scale", 1.0))))
    e = d["episode"]
    ew = f"{where}.episode"
    _expect_keys(e, ew, ("id", "start", "goal", "instruction", "split", "seed"))
    ins = e["instruction"]
    _expect_keys(ins, f"{ew}.instruction", ("template", "slots", "text"))
    return Episode(
        episode_id=str(e["id"]),
        wmap=wmap,
        start=tuple(_floats(e["start"], f"{ew}.start", 3)),
        goal=tuple(_floats(e["goal"], f"{ew}.goal", 2)),
        pedestrians=peds,
        instruction=Instruction(template_id=str(ins["template"]),
                                slots=dict(ins["slots"]),
                                text=str(ins["text"])),
        split=str(e["split"]),
        seed=int(e["seed"]))


def scenarios_to_json(episodes, generator: dict | None = None) -> str:
    doc = {"version": SCENARIO_VERSION,
           "scenarios": [episode_to_dict(ep) for ep in episodes]}
    if generator is not None:
        doc["generator"] = generator
        doc["config_hash"] = config_hash(generator)
    return canonical_json(doc) + "\n"


def scenarios_from_json(text: str) -> list:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from exc
    _expect_keys(doc, "document", ("version", "scenarios"),
                 ("generator", "config_hash"))
    if doc["version"] != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported version {doc['version']!r}")
    if not isinstance(doc["scenarios"], list):
        raise ScenarioError("document.scenarios: expected a list")
    return [episode_from_dict(s, f"scenarios[{i}]")
            for i, s in enumerate(doc["scenarios"])]


def save_scenarios(path: str, episodes, generator: dict | None = None) -> None:
    atomic_write_text(path, scenarios_to_json(episodes, generator))


def load_scenarios(path: str) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return scenarios_from_json(fh.read())


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, models: Models, meta: dict | None = None) -> None:
    """npz checkpoint with exact float preservation and a JSON meta record."""
    arrays = {}
    for name, arr in named_arrays(models.policy, "policy"):
        arrays[name] = arr
    for name, arr in named_arrays(models.forecaster, "forecaster"):
        arrays[name] = arr
    record = {"format_version": CHECKPOINT_VERSION}
    record.update(meta or {})
    arrays["meta"] = np.frombuffer(
        canonical_json(record).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path: str):
    """Returns (Models, meta). Parameter values round-trip bit exactly."""
    models = Models(policy=topo.init_policy(0), forecaster=fc.init_forecaster(0))
    with np.load(path) as data:
        names = set(data.files)
        for name, arr in list(named_arrays(models.policy, "policy")) + \
                list(named_arrays(models.forecaster, "forecaster")):
            if name not in names:
                raise ValueError(f"checkpoint missing array {name}")
            stored = data[name]
            if stored.shape != arr.shape:
                raise ValueError(f"checkpoint array {name} has shape "
                                 f"{stored.shape}, expected {arr.shape}")
            arr[...] = stored
        meta = json.loads(bytes(data["meta"]).decode("utf-8")) \
            if "meta" in names else {}
    return models, meta


# ---------------------------------------------------------------------------
# episode logs


def log_line(log: EpisodeLog) -> str:
    d = log_to_dict(log)
    d["content_hash"] = content_hash(canonical_json(d))
    return canonical_json(d)


def logs_to_jsonl(logs) -> str:
    return "".join(log_line(log) + "\n" for log in logs)


def save_logs(path: str, logs) -> None:
    atomic_write_text(path, logs_to_jsonl(logs))


def load_logs(path: str, verify: bool = True) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            stated = d.pop("content_hash", None)
            if verify and stated != content_hash(canonical_json(d)):
                raise ValueError(f"log line {i}: content hash mismatch")
            out.append(log_from_dict(d))
    return out
