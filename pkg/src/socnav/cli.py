"""Command line interface.

Subcommands: gen, train, eval, ablate, gradcheck, replay. Exit codes: 0 on
success, 1 for usage/configuration errors (bad flags, missing or malformed
files), 2 for runtime failures. All file outputs are written atomically,
carry a config hash where applicable, and are byte-identical across reruns
with the same arguments.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import evaluation, forecast, replay, scenario, train as training
from .agent import navigate_episode
from .train import TrainConfig, init_models
from .util import atomic_write_text, config_hash


class ConfigError(Exception):
    """Bad paths, malformed files, or inconsistent options (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on bad usage; this CLI reserves 2
    for runtime failures and reports usage problems with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _load_config(path: str | None, iterations: int | None,
                 seed: int | None) -> TrainConfig:
    if path:
        _require_file(path, "config file")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                cfg = TrainConfig.from_dict(json.load(fh))
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad config file {path}: {exc}") from exc
    else:
        cfg = TrainConfig()
    if iterations is not None:
        cfg = dataclasses.replace(cfg, iterations=iterations)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _load_episodes(path: str) -> list:
    _require_file(path, "episode file")
    try:
        return scenario.load_scenarios(path)
    except scenario.ScenarioError as exc:
        raise ConfigError(f"bad episode file {path}: {exc}") from exc


def _runner_overrides(args) -> dict:
    overrides = {}
    for t in args.toggle or ():
        if t not in evaluation.TOGGLES:
            raise ConfigError(f"unknown toggle {t!r}; choose from "
                              f"{sorted(evaluation.TOGGLES)}")
        for k, v in evaluation.TOGGLES[t].items():
            if k in ("use_geo", "use_sem", "use_depth", "use_objects",
                     "nominal_depth"):
                overrides[k] = v
    if getattr(args, "sigma", None) is not None:
        overrides["sigma"] = args.sigma
    return overrides


def _metrics_line(report) -> str:
    return (f"n={report.n} ne={report.ne:.3f} sr={report.sr:.3f} "
            f"cr={report.cr:.3f} tcr={report.tcr:.3f}")


def cmd_gen(args) -> int:
    generator = {"split": args.split, "n": args.n, "seed": args.seed}
    episodes = evaluation.generate_benchmark(args.n, args.split, args.seed)
    scenario.save_scenarios(args.out, episodes, generator=generator)
    print(f"wrote {len(episodes)} {args.split} episodes to {args.out} "
          f"(config_hash={config_hash(generator)})")
    return 0


def cmd_train(args) -> int:
    episodes = _load_episodes(args.episodes)
    cfg = _load_config(args.config, args.iterations, args.seed)
    result = training.train(cfg, episodes)
    last = result.curves[-1]
    meta = {"config": cfg.to_dict(), "config_hash": cfg.digest(),
            "iterations": cfg.iterations, "final": last.as_dict()}
    scenario.save_checkpoint(args.out, result.models, meta)
    curves_path = args.curves or (args.out + ".curves.csv")
    atomic_write_text(curves_path,
                      training.curves_to_csv(result.curves, cfg.digest()))
    print(f"trained {cfg.iterations} iterations on {len(episodes)} episodes "
          f"(config_hash={cfg.digest()})")
    print(f"final losses: nav={last.nav:.4f} pose={last.pose:.4f} "
          f"traj={last.traj:.4f} coll={last.coll:.4f} prox={last.prox:.4f} "
          f"total={last.total:.4f}")
    print(f"wrote {args.out} and {curves_path}")
    return 0


def cmd_eval(args) -> int:
    episodes = _load_episodes(args.episodes)
    if args.checkpoint:
        _require_file(args.checkpoint, "checkpoint")
        models, meta = scenario.load_checkpoint(args.checkpoint)
        base = (TrainConfig.from_dict(meta["config"])
                if "config" in meta else TrainConfig())
    else:
        base = TrainConfig()
        models = init_models(base)
    runner = dataclasses.replace(base.runner(student_prob=0.0),
                                 **_runner_overrides(args))
    report, logs = evaluation.evaluate(models, episodes, runner,
                                       seed=args.seed, workers=args.workers,
                                       tag="+".join(args.toggle or ()) or "full")
    print(_metrics_line(report))
    if args.out:
        scenario.save_logs(args.out, logs)
        print(f"wrote {len(logs)} logs to {args.out}")
    if args.metrics_out:
        rows = [evaluation.AblationRow(report.tag, args.seed, report)]
        atomic_write_text(args.metrics_out,
                          evaluation.metrics_csv(rows, base.digest()))
        print(f"wrote {args.metrics_out}")
    return 0


def cmd_ablate(args) -> int:
    train_eps = _load_episodes(args.train_episodes)
    eval_eps = _load_episodes(args.eval_episodes)
    cfg = _load_config(args.config, args.iterations, args.seed)
    if args.toggle:
        try:
            variants = [evaluation.Variant("full", {}),
                        evaluation.variant_from_toggles(args.toggle)]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    elif args.variants:
        names = args.variants.split(",")
        known = {v.name: v for v in evaluation.STANDARD_VARIANTS}
        bad = [n for n in names if n not in known]
        if bad:
            raise ConfigError(f"unknown variants {bad}; choose from "
                              f"{sorted(known)}")
        variants = [known[n] for n in names]
    else:
        variants = [v for v in evaluation.STANDARD_VARIANTS
                    if v.name in ("full", "no_social", "sem_off")]
    seeds = tuple(int(s) for s in args.seeds.split(","))
    result = evaluation.run_ablation(cfg, train_eps, eval_eps, variants,
                                     seeds=seeds, workers=args.workers)
    md = evaluation.ablation_markdown(result, cfg.digest())
    print(md, end="")
    print(f"elapsed: {result.elapsed_s:.1f}s")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write_text(os.path.join(args.out, "ablation.csv"),
                          evaluation.metrics_csv(result.rows, cfg.digest()))
        atomic_write_text(os.path.join(args.out, "ablation.md"), md)
        print(f"wrote {args.out}/ablation.csv and {args.out}/ablation.md")
    return 0


def cmd_gradcheck(args) -> int:
    batch = training.synthetic_forecast_batch(seed=args.seed)
    fparams = forecast.init_forecaster(args.seed + 1)
    f_err = forecast.grad_check(fparams, batch, n_probes=args.probes,
                                seed=args.seed)
    inputs, expert_idx, penalties = training.synthetic_policy_case(args.seed)
    pparams = training.random_policy(args.seed + 2)
    p_err = training.policy_grad_check(inputs, pparams, expert_idx, penalties,
                                       n_probes=args.probes, seed=args.seed)
    print(f"forecaster max relative gradient error: {f_err:.3e}")
    print(f"policy max relative gradient error:     {p_err:.3e}")
    if max(f_err, p_err) > args.tol:
        raise RuntimeError(f"gradient error above tolerance {args.tol}")
    return 0


def cmd_replay(args) -> int:
    episodes = _load_episodes(args.episodes)
    matches = [ep for ep in episodes if ep.episode_id == args.id]
    if not matches:
        raise ConfigError(f"episode {args.id!r} not found in {args.episodes}")
    episode = matches[0]
    if args.log:
        _require_file(args.log, "log file")
        logs = [l for l in scenario.load_logs(args.log)
                if l.episode_id == args.id]
        if not logs:
            raise ConfigError(f"no log for {args.id!r} in {args.log}")
        log = logs[0]
    else:
        if args.checkpoint:
            _require_file(args.checkpoint, "checkpoint")
            models, meta = scenario.load_checkpoint(args.checkpoint)
            base = (TrainConfig.from_dict(meta["config"])
                    if "config" in meta else TrainConfig())
        else:
            base = TrainConfig()
            models = init_models(base)
        log = navigate_episode(episode, models, mode="greedy", seed=args.seed,
                               config=base.runner(student_prob=0.0))
    log_path = args.out + ".jsonl"
    scenario.save_logs(log_path, [log])
    replay.save_svg(args.out, episode, log)
    print(f"wrote {args.out} and {log_path}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="socnav",
                     description="Human-aware navigation: benchmarks, "
                                 "training, evaluation, and replays.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="generate a validated episode benchmark")
    p.add_argument("--split", choices=("seen", "unseen"), required=True)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="scenario JSON path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train policy and forecasters")
    p.add_argument("--episodes", required=True, help="scenario JSON path")
    p.add_argument("--config", default=None,
                   help="JSON file of training-config fields")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--curves", default=None, help="loss-curve CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation over a benchmark")
    p.add_argument("--episodes", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=evaluation.EVAL_SEED)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sigma", type=float, default=None,
                   help="observation noise in meters")
    p.add_argument("--toggle", action="append", default=None,
                   metavar="NAME",
                   help="disable a feature (repeatable): "
                        "geo_off, sem_off, rgb_only, depth_only")
    p.add_argument("--out", default=None, help="episode-log JSONL path")
    p.add_argument("--metrics-out", default=None, help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="matched-seed feature ablations")
    p.add_argument("--train-episodes", required=True)
    p.add_argument("--eval-episodes", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds", default="0,1,2",
                   help="comma-separated matched seed shifts")
    p.add_argument("--toggle", action="append", default=None, metavar="NAME",
                   help="ablate this feature combination vs the full model "
                        "(repeatable): " + ",".join(sorted(evaluation.TOGGLES)))
    p.add_argument("--variants", default=None,
                   help="comma-separated subset of: " +
                        ",".join(v.name for v in evaluation.STANDARD_VARIANTS))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck",
                       help="compare analytic and numeric gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("replay", help="render an episode (and log) as SVG")
    p.add_argument("--episodes", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--log", default=None,
                   help="existing log JSONL; omitted -> fresh greedy rollout")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="SVG path")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"socnav: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"socnav: error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except Exception as exc:   # runtime failure -> exit 2, message on stderr
        print(f"socnav: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
