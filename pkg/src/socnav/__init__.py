"""Deterministic human-populated navigation: a 2-D simulator with scripted
pedestrians and synthetic panoramic sensing, sequence forecasters for human
pose and trajectory, a semantic activity interpreter, a topological scene
graph policy, and the training/evaluation loops that tie them together.
"""

__version__ = "0.1.0"

from .agent import Models, RunnerConfig, navigate_episode
from .evaluation import (MetricsReport, compute_metrics, evaluate,
                         generate_benchmark, run_ablation)
from .train import TrainConfig
from .world import Episode, WorldMap

__all__ = [
    "Models", "RunnerConfig", "navigate_episode",
    "MetricsReport", "compute_metrics", "evaluate", "generate_benchmark",
    "run_ablation", "TrainConfig", "Episode", "WorldMap",
    "__version__",
]
