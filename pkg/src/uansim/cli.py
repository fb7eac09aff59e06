"""Command-line entry points.

Verbs: front (compute and export the design front), train (learn a
scheduling policy), sweep (traffic or payload sweep), ablation (observation
variants), plotdata (per-policy series from a results CSV), validate-config
(schema check plus effective-config echo).

Exit codes: 0 success, 2 configuration problems, 3 missing inputs,
4 runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    build_ga_params,
    build_modem,
    build_reward_config,
    build_scenario,
    build_train_config,
    load_config,
    preset_config,
    write_effective_config,
)
from .experiments import (
    ExperimentError,
    export_plot_data,
    read_results_csv,
    run_ablation,
    run_sweep,
    write_manifest,
    write_results_csv,
)
from .pareto import (
    DesignProblem,
    FrontError,
    build_action_space,
    evolve,
    save_front,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_RUN = 4


def _load(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config, preset=args.preset)
    else:
        cfg = preset_config(args.preset)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(
            cfg, experiments=replace(cfg.experiments, master_seed=args.seed)
        )
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_front(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    problem = DesignProblem(
        build_modem(cfg),
        cfg.channel,
        cfg.front.design_distance_km,
        cfg.scenario.payload_bytes,
    )
    rng = np.random.default_rng(
        np.random.SeedSequence((cfg.experiments.master_seed, 0xF0))
    )
    result = evolve(problem, build_ga_params(cfg), rng)
    front_path = out / "front.txt"
    save_front(front_path, result.solutions)
    with open(out / "hypervolume.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "hypervolume"])
        for g, hv in enumerate(result.hypervolume_trace):
            writer.writerow([g, f"{hv:.9g}"])
    write_effective_config(cfg, out / "effective-config.yaml")
    print(f"front: {len(result.solutions)} members -> {front_path}")
    for s in result.solutions:
        print(
            f"  mode {s.mode_index}  p={s.power_w:.4g} W  "
            f"delay={s.delay_s:.6g} s  energy={s.energy_j:.6g} J"
        )
    try:
        build_action_space(result.solutions, cfg.front.u_target)
    except FrontError as exc:
        print(f"note: {exc}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .marl import (
        Trainer,
        save_policy_checkpoint,
        write_checkpoint_manifest,
    )
    from .experiments import baseline_front

    cfg = _load(args)
    out = _outdir(args)
    scenario = build_scenario(cfg)
    front = baseline_front(cfg, scenario.payload_bytes)
    try:
        action_space = build_action_space(front, cfg.front.u_target)
    except FrontError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    trainer = Trainer(
        scenario,
        action_space,
        cfg.training.obs_mode,
        build_train_config(cfg),
        build_reward_config(cfg),
        seed=cfg.experiments.master_seed,
    )
    result = trainer.train()
    ckpt = out / "policy.ckpt"
    save_policy_checkpoint(ckpt, result, cfg.experiments.master_seed, scenario)
    write_checkpoint_manifest(out / "policy.manifest.txt", ckpt, result,
                              cfg.experiments.master_seed)
    with open(out / "training-log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "mean_eval_reward", "loss", "epsilon"])
        for row in result.log:
            writer.writerow(
                [
                    row["episode"],
                    f"{row['mean_eval_reward']:.9g}",
                    f"{row['loss']:.9g}",
                    f"{row['epsilon']:.9g}",
                ]
            )
    write_effective_config(cfg, out / "effective-config.yaml")
    print(
        f"trained {cfg.training.episodes} episodes; best mean eval reward "
        f"{result.best_eval_reward:.6g} at episode {result.best_episode}"
    )
    print(f"checkpoint -> {ckpt}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    policies = args.policy.split(",") if args.policy else None
    csv_path = out / f"sweep-{args.kind}.csv"
    manifest_path = out / f"sweep-{args.kind}.manifest.json"

    def progress(name, point, row):
        if not args.quiet:
            print(f"  {name} @ {point}: {row.replications} episodes")

    try:
        rows = run_sweep(cfg, kind=args.kind, policies=policies, progress=progress)
    except ExperimentError as exc:
        write_results_csv(exc.partial_rows, csv_path)
        write_manifest(manifest_path, cfg, f"sweep-{args.kind}",
                       len(exc.partial_rows), aborted=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT if isinstance(exc, FileNotFoundError) else EXIT_CONFIG
    write_results_csv(rows, csv_path)
    write_manifest(manifest_path, cfg, f"sweep-{args.kind}", len(rows))
    write_effective_config(cfg, out / "effective-config.yaml")
    print(f"{len(rows)} rows -> {csv_path}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    csv_path = out / "ablation.csv"

    def progress(name, point, row):
        if not args.quiet:
            print(f"  {name} @ {point}: {row.replications} episodes")

    try:
        rows = run_ablation(cfg, progress=progress)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        write_results_csv(exc.partial_rows, csv_path)
        write_manifest(out / "ablation.manifest.json", cfg, "ablation",
                       len(exc.partial_rows), aborted=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN
    write_results_csv(rows, csv_path)
    write_manifest(out / "ablation.manifest.json", cfg, "ablation", len(rows))
    write_effective_config(cfg, out / "effective-config.yaml")
    print(f"{len(rows)} rows -> {csv_path}")
    return EXIT_OK


def cmd_plotdata(args) -> int:
    try:
        rows = read_results_csv(args.results)
    except FileNotFoundError:
        print(f"error: results file not found: {args.results}", file=sys.stderr)
        return EXIT_INPUT
    try:
        written = export_plot_data(rows, args.metric, args.out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in written:
        print(path)
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cfg = _load(args)
    import yaml

    from .config import effective_tree

    sys.stdout.write(yaml.safe_dump(effective_tree(cfg), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uansim",
        description="Underwater acoustic network simulator and experiment harness",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--preset", choices=("desk", "full"), default="desk")
        p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("front", help="compute and export the design front")
    common(p, "results/front")
    p.set_defaults(func=cmd_front)

    p = sub.add_parser("train", help="train the learned scheduling policy")
    common(p, "results/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a traffic or payload sweep")
    common(p, "results/sweep")
    p.add_argument("--kind", choices=("rate", "payload"), default="rate")
    p.add_argument("--policy", help="comma-separated policy names")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablation", help="compare observation variants")
    common(p, "results/ablation")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("plotdata", help="export per-policy plot series")
    p.add_argument("--results", required=True, help="results CSV from a sweep")
    p.add_argument("--metric", required=True)
    p.add_argument("--out", default="results/plotdata")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("validate-config", help="check a config and echo it")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.set_defaults(func=cmd_validate_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ExperimentError, FloatingPointError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
