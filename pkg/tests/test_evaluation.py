import dataclasses
import json
import math

import numpy as np
import pytest

from socnav import evaluation as ev
from socnav import world
from socnav.agent import EpisodeLog, RunnerConfig
from socnav.scenario import episode_to_dict
from socnav.train import TrainConfig, init_models


# ---------------------------------------------------------------------------
# metrics


def test_metric_fixture_exact_values():
    report = ev.compute_metrics([1.0, 2.0, 5.0], [0, 2, 0], delta=3.0)
    assert report.ne == 8.0 / 3.0
    assert report.sr == 1.0 / 3.0
    assert report.cr == 1.0 / 3.0
    assert report.tcr == 2.0 / 3.0
    assert report.n == 3


def test_success_requires_strictly_inside_radius():
    report = ev.compute_metrics([3.0], [0], delta=3.0)
    assert report.sr == 0.0
    assert ev.compute_metrics([2.999], [0], delta=3.0).sr == 1.0


def test_success_requires_zero_contacts():
    report = ev.compute_metrics([1.0], [1], delta=3.0)
    assert report.sr == 0.0
    assert report.cr == 1.0


def test_metrics_reject_empty_and_mismatched_input():
    with pytest.raises(ev.EmptyInput):
        ev.compute_metrics([], [])
    with pytest.raises(ValueError):
        ev.compute_metrics([1.0, 2.0], [0])


def test_metric_invariants_on_random_outcomes():
    gen = np.random.default_rng(0)
    for _ in range(50):
        n = int(gen.integers(1, 30))
        d = gen.uniform(0.0, 8.0, size=n)
        e = gen.poisson(0.7, size=n)
        r = ev.compute_metrics(d, e)
        assert 0.0 <= r.sr <= 1.0
        assert 0.0 <= r.cr <= 1.0
        assert r.sr + r.cr <= 1.0 + 1e-12
        assert r.tcr >= r.cr - 1e-12


def fake_log(episode_id, final, goal, n_events):
    return EpisodeLog(episode_id=episode_id, seed=0, mode="greedy", steps=[],
                      final_position=final, goal=goal, termination="stop",
                      n_events=n_events, forecast_calls=0, interpret_calls=0)


def test_metrics_from_logs_uses_final_distance():
    logs = [fake_log("e0", (3.0, 4.0), (0.0, 0.0), 0),
            fake_log("e1", (1.0, 1.0), (1.0, 1.0), 0),
            fake_log("e2", (2.0, 0.0), (1.0, 0.0), 2)]
    r = ev.metrics_from_logs(logs, delta=3.0)
    assert r.ne == pytest.approx(2.0)
    assert r.sr == pytest.approx(1.0 / 3.0)
    assert r.cr == pytest.approx(1.0 / 3.0)
    assert r.tcr == pytest.approx(2.0 / 3.0)


# ---------------------------------------------------------------------------
# benchmark generation


def test_generate_benchmark_counts_and_split_tag():
    eps = ev.generate_benchmark(4, split="seen", seed=0)
    assert len(eps) == 4
    assert all(ep.split == "seen" for ep in eps)
    assert [ep.episode_id for ep in eps] == [f"seen-{i:04d}" for i in range(4)]


def test_generate_benchmark_is_deterministic():
    a = ev.generate_benchmark(3, split="unseen", seed=9)
    b = ev.generate_benchmark(3, split="unseen", seed=9)
    for ea, eb in zip(a, b):
        assert json.dumps(episode_to_dict(ea)) == json.dumps(episode_to_dict(eb))
    c = ev.generate_benchmark(3, split="unseen", seed=10)
    assert json.dumps(episode_to_dict(a[0])) != json.dumps(episode_to_dict(c[0]))


def test_generate_benchmark_episodes_are_valid():
    for split in ("seen", "unseen"):
        for ep in ev.generate_benchmark(3, split=split, seed=2):
            world.validate_episode(ep)
            assert ep.pedestrians
            assert any(o.label in ep.instruction.text.lower()
                       for o in ep.wmap.objects)


def test_seen_and_unseen_use_disjoint_families():
    assert not set(ev.benchmark_families("seen")) & set(
        ev.benchmark_families("unseen"))
    with pytest.raises(ValueError):
        ev.benchmark_families("test")


# ---------------------------------------------------------------------------
# evaluation rollouts


@pytest.fixture(scope="module")
def bench():
    return ev.generate_benchmark(4, split="seen", seed=1)


def test_evaluate_returns_report_and_logs(bench):
    models = init_models(TrainConfig())
    report, logs = ev.evaluate(models, bench, RunnerConfig(t_max=6), tag="full")
    assert report.n == len(bench) == len(logs)
    assert report.tag == "full"
    assert report.split == "seen"
    assert [l.episode_id for l in logs] == [ep.episode_id for ep in bench]


def test_evaluate_worker_count_does_not_change_results(bench):
    models = init_models(TrainConfig())
    cfg = RunnerConfig(t_max=6)
    r1, logs1 = ev.evaluate(models, bench, cfg, workers=1)
    r2, logs2 = ev.evaluate(models, bench, cfg, workers=2)
    assert r1 == r2
    from socnav.agent import log_to_dict
    assert [log_to_dict(a) for a in logs1] == [log_to_dict(b) for b in logs2]


# ---------------------------------------------------------------------------
# variants and ablations


def test_variant_from_toggles():
    v = ev.variant_from_toggles(["sem_off"])
    assert v.name == "sem_off"
    assert v.train_overrides == {"use_sem": False}
    both = ev.variant_from_toggles(["coll_off", "prox_off"])
    assert both.name == "coll_off+prox_off"
    assert both.train_overrides == {"lambda_coll": 0.0, "lambda_prox": 0.0}
    assert ev.variant_from_toggles([]).name == "full"
    with pytest.raises(ValueError):
        ev.variant_from_toggles(["warp_drive"])


def test_standard_variants_unique_and_known():
    names = [v.name for v in ev.STANDARD_VARIANTS]
    assert len(names) == len(set(names))
    assert names[0] == "full"
    assert "no_social" in names


def test_rgb_only_sets_nominal_depth():
    v = ev.variant_from_toggles(["rgb_only"])
    assert v.train_overrides == {"use_depth": False, "nominal_depth": 2.5}


def test_run_ablation_reuses_models_for_shared_training(bench, monkeypatch):
    calls = []
    real_train = ev.train

    def counting_train(cfg, episodes, **kw):
        calls.append(cfg.seed)
        return real_train(cfg, episodes, **kw)

    monkeypatch.setattr(ev, "train", counting_train)
    variants = [ev.Variant("full", {}),
                ev.Variant("obs_sem_off", {}, {"use_sem": False})]
    cfg = TrainConfig(iterations=2, t_max=5)
    result = ev.run_ablation(cfg, bench[:2], bench[2:], variants=variants,
                             seeds=(0,))
    # both variants share one training run per seed
    assert len(calls) == 1
    assert {r.variant for r in result.rows} == {"full", "obs_sem_off"}
    assert result.elapsed_s > 0.0
    assert set(result.medians["full"]) == {"ne", "sr", "cr", "tcr"}


def test_run_ablation_matched_seeds_structure(bench):
    cfg = TrainConfig(iterations=2, t_max=5)
    variants = [ev.Variant("full", {}),
                ev.Variant("no_social", {"lambda_coll": 0.0,
                                         "lambda_prox": 0.0})]
    result = ev.run_ablation(cfg, bench[:2], bench[2:], variants=variants,
                             seeds=(0, 1))
    assert len(result.rows) == 4
    assert sorted({r.seed for r in result.rows}) == [0, 1]
    assert result.median("full", "sr") == result.medians["full"]["sr"]


def test_ablation_markdown_and_csv_formats():
    report = ev.MetricsReport(n=2, ne=1.5, sr=0.5, cr=0.0, tcr=0.0,
                              split="seen", tag="full")
    rows = [ev.AblationRow("full", 0, report)]
    result = ev.AblationResult(
        rows=rows, medians={"full": {"ne": 1.5, "sr": 0.5, "cr": 0.0,
                                     "tcr": 0.0}}, elapsed_s=1.0)
    md = ev.ablation_markdown(result, digest="cafe")
    assert md.startswith("<!-- config_hash=cafe -->")
    assert "| full | 1.500 | 0.500 | 0.000 | 0.000 |" in md
    csv = ev.metrics_csv(rows, digest="cafe")
    lines = csv.strip().split("\n")
    assert lines[0] == "# config_hash=cafe"
    assert lines[1] == "variant,seed,split,n,ne,sr,cr,tcr"
    assert lines[2] == "full,0,seen,2,1.5,0.5,0.0,0.0"
