"""Activity interpretation: rule-based descriptions, optional remote service,
and hashed bag-of-words text features."""

from __future__ import annotations

import json
import math
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .util import fnv1a_64

TEXT_FEATURE_DIM = 128
SLOW_SPEED = 0.1   # m/s, below this a person is standing
FAST_SPEED = 0.8   # m/s, above this a person is walking quickly
ENDPOINT_ENV_VAR = "HCSG_INTERPRETER_URL"

DEFAULT_PROMPT = ("Describe what this person is doing and how they are moving, "
                  "in one short sentence relevant to a robot navigating nearby.")


@dataclass(frozen=True)
class InterpreterConfig:
    kind: str = "rule"          # "rule" or "remote"
    endpoint: str = ""
    timeout: float = 5.0
    prompt: str = DEFAULT_PROMPT


def interpreter_from_env() -> InterpreterConfig:
    """Remote config when the endpoint env var is set, rule-based otherwise."""
    url = os.environ.get(ENDPOINT_ENV_VAR, "")
    if url:
        return InterpreterConfig(kind="remote", endpoint=url)
    return InterpreterConfig()


@dataclass(frozen=True)
class ActivityDescription:
    track_id: int
    text: str
    source: str  # "rule", "remote", or "fallback"


def _tokenize(text: str):
    return re.findall(r"[a-z0-9]+", text.lower())


def encode_text(text: str) -> np.ndarray:
    """L2-normalized 128-bucket hashed bag of words (FNV-1a mod 128).

    Token order does not matter; the zero vector comes back for token-free
    input.
    """
    vec = np.zeros(TEXT_FEATURE_DIM)
    for tok in _tokenize(text):
        vec[fnv1a_64(tok) % TEXT_FEATURE_DIM] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def mean_speed(positions: np.ndarray, dt: float) -> float:
    """Mean frame-to-frame speed of a track, m/s."""
    if positions.shape[0] < 2:
        return 0.0
    deltas = np.diff(positions, axis=0)
    return float(np.mean(np.linalg.norm(deltas, axis=1))) / dt


def motion_clause(speed: float) -> str:
    if speed < SLOW_SPEED:
        return "standing still"
    if speed < FAST_SPEED:
        return "walking slowly"
    return "walking quickly"


def _rule_description(track) -> str:
    clause = motion_clause(mean_speed(track.positions, track.dt))
    return f"A person is {track.truth_label}, {clause}."


def _remote_description(track, config: InterpreterConfig) -> str:
    payload = {
        "track": [
            {
                "x": float(track.positions[i, 0]),
                "y": float(track.positions[i, 1]),
                "keypoints": track.keypoints[i].tolist(),
                "t": int(track.steps[i]),
            }
            for i in range(track.positions.shape[0])
        ],
        "prompt": config.prompt,
    }
    req = urllib.request.Request(
        config.endpoint,
        data=json.dumps(payload).encode("utf-8"),
        headers={"Content-Type": "application/json"},
        method="POST")
    with urllib.request.urlopen(req, timeout=config.timeout) as resp:
        body = json.loads(resp.read().decode("utf-8"))
    text = body["description"]
    if not isinstance(text, str) or not text:
        raise ValueError("remote interpreter returned no description")
    return text


def interpret(track, config: InterpreterConfig = InterpreterConfig()) -> ActivityDescription:
    """Describe one track. Remote failures of any kind fall back to the
    rule-based path with source=\"fallback\"."""
    if config.kind == "remote" and config.endpoint:
        try:
            text = _remote_description(track, config)
            return ActivityDescription(track.track_id, text, "remote")
        except (urllib.error.URLError, OSError, ValueError, KeyError,
                json.JSONDecodeError, TimeoutError):
            return ActivityDescription(track.track_id, _rule_description(track), "fallback")
    return ActivityDescription(track.track_id, _rule_description(track), "rule")
