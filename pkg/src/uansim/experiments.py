"""Experiment orchestration: sweeps, ablations, result tables, plot data.

Every episode's seed derives from (master_seed, policy index, sweep index,
replication index), so any table can be regenerated byte-for-byte from its
config. Result CSVs carry no timestamps; provenance (config hash, package
version, wall-clock) lives in a JSON sidecar manifest.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .config import ExperimentConfig, build_scenario, config_hash
from .engine import EpisodeResult, run_episode
from .pareto import (
    DesignProblem,
    ParetoSolution,
    brute_force_front,
    evolve,
    load_front,
)
from .policies import policy_bundle


class ExperimentError(RuntimeError):
    """An episode failed mid-suite; partial results were flushed."""


METRIC_FIELDS = (
    "throughput_pkt_s",
    "throughput_bit_s",
    "mean_delay_s",
    "energy_per_packet_j",
    "delivery_ratio",
    "utilization",
)
COUNT_FIELDS = ("sent", "received", "conflicts", "sinr_failures")

METRIC_ALIASES = {
    "throughput": "throughput_pkt_s",
    "bitrate": "throughput_bit_s",
    "delay": "mean_delay_s",
    "energy": "energy_per_packet_j",
    "delivery": "delivery_ratio",
    "utilization": "utilization",
}


@dataclass
class SweepRow:
    policy: str
    sweep: str           # "rate", "payload_bytes", or "variant"
    value: object
    replications: int
    means: dict
    stds: dict
    counts: dict


def episode_seed(master_seed: int, policy_idx: int, sweep_idx: int, rep: int):
    return np.random.SeedSequence((master_seed, policy_idx, sweep_idx, rep))


def aggregate(results: list[EpisodeResult], policy: str, sweep: str, value) -> SweepRow:
    """Mean and population stddev per metric; episodes where a ratio metric
    is undefined (no receptions) are left out of that metric's average."""
    means, stds = {}, {}
    for name in METRIC_FIELDS:
        vals = [getattr(r.metrics, name) for r in results]
        vals = [v for v in vals if v is not None]
        if vals:
            means[name] = float(np.mean(vals))
            stds[name] = float(np.std(vals))
        else:
            means[name] = None
            stds[name] = None
    counts = {
        name: float(np.mean([getattr(r.metrics, name) for r in results]))
        for name in COUNT_FIELDS
    }
    return SweepRow(policy, sweep, value, len(results), means, stds, counts)


def baseline_front(config: ExperimentConfig, payload_bytes: int) -> list[ParetoSolution]:
    """Front used to parameterize baseline policies and the random reference.

    The deterministic power-grid front is the default; a stored front file
    (artifacts.front_path) overrides it, and front.source="ga" switches to
    an evolved front seeded from the experiment master seed.
    """
    if config.artifacts.front_path and payload_bytes == config.scenario.payload_bytes:
        return load_front(config.artifacts.front_path)
    from .config import build_ga_params, build_modem

    problem = DesignProblem(
        build_modem(config),
        config.channel,
        config.front.design_distance_km,
        payload_bytes,
    )
    if config.front.source == "ga":
        rng = np.random.default_rng(
            np.random.SeedSequence((config.experiments.master_seed, 0xF0))
        )
        return evolve(problem, build_ga_params(config), rng).solutions
    return brute_force_front(problem, config.front.grid_step_w)


def _bundle(config, name, scenario, front, checkpoint_path):
    from .config import build_modem

    return policy_bundle(
        name,
        scenario,
        build_modem(config),
        config.channel,
        front=front,
        action_space=None,
        checkpoint_path=checkpoint_path,
    )


def run_sweep(
    config: ExperimentConfig,
    kind: str = "rate",
    policies: list[str] | None = None,
    progress=None,
) -> list[SweepRow]:
    """One aggregated row per (policy, sweep point).

    kind "rate" sweeps per-node traffic at the configured payload; kind
    "payload" sweeps packet size at the fixed payload-sweep rate. A failing
    episode aborts with ExperimentError after the completed rows are kept
    on the exception as .partial_rows.
    """
    ex = config.experiments
    if kind == "rate":
        points = list(ex.rate_sweep)
    elif kind == "payload":
        points = list(ex.payload_sweep)
    else:
        raise ValueError("kind must be 'rate' or 'payload'")
    names = list(policies) if policies is not None else list(ex.policies)
    unknown = [n for n in names if n not in ex.policies]
    policy_index = {n: i for i, n in enumerate(ex.policies)}
    for n in unknown:
        policy_index.setdefault(n, len(policy_index))

    rows: list[SweepRow] = []
    fronts: dict[int, list[ParetoSolution]] = {}
    try:
        for name in names:
            p_idx = policy_index[name]
            for s_idx, point in enumerate(points):
                if kind == "rate":
                    payload, rate = config.scenario.payload_bytes, float(point)
                    scenario = build_scenario(config, per_node_rate=rate)
                else:
                    payload, rate = int(point), ex.payload_sweep_rate
                    scenario = build_scenario(
                        config, payload_bytes=payload, per_node_rate=rate
                    )
                if payload not in fronts:
                    fronts[payload] = baseline_front(config, payload)
                bundle = _bundle(
                    config, name, scenario, fronts[payload],
                    config.artifacts.checkpoint_path,
                )
                results = []
                for rep in range(ex.replications):
                    seed = episode_seed(ex.master_seed, p_idx, s_idx, rep)
                    results.append(run_episode(scenario, bundle, seed))
                sweep_label = "rate" if kind == "rate" else "payload_bytes"
                rows.append(aggregate(results, name, sweep_label, point))
                if progress is not None:
                    progress(name, point, rows[-1])
    except Exception as exc:
        err = ExperimentError(f"sweep aborted at {len(rows)} completed rows: {exc}")
        err.partial_rows = rows
        raise err from exc
    return rows


ABLATION_VARIANTS = ("full", "local_load", "bare")


def run_ablation(config: ExperimentConfig, progress=None) -> list[SweepRow]:
    """Compare the three observation variants, each on its own checkpoint
    and its training payload size."""
    from .marl import load_policy_bundle
    from .qnet import load_checkpoint

    paths = {
        "full": config.artifacts.ablation_full_path,
        "local_load": config.artifacts.ablation_local_load_path,
        "bare": config.artifacts.ablation_bare_path,
    }
    missing = [k for k, v in paths.items() if not v]
    if missing:
        raise FileNotFoundError(f"ablation checkpoints missing for: {missing}")
    ex = config.experiments
    rows: list[SweepRow] = []
    try:
        for v_idx, variant in enumerate(ABLATION_VARIANTS):
            _, _, meta = load_checkpoint(paths[variant])
            if meta.get("obs_mode") != variant:
                raise ValueError(
                    f"checkpoint {paths[variant]} holds obs_mode "
                    f"{meta.get('obs_mode')!r}, expected {variant!r}"
                )
            scenario = build_scenario(
                config,
                payload_bytes=int(meta["payload_bytes"]),
                per_node_rate=float(meta.get("per_node_rate", ex.payload_sweep_rate)),
            )
            bundle = load_policy_bundle(paths[variant], scenario.n_nodes)
            results = []
            for rep in range(ex.replications):
                seed = episode_seed(ex.master_seed, v_idx, 0, rep)
                results.append(run_episode(scenario, bundle, seed))
            rows.append(aggregate(results, f"marl_{variant}", "variant", variant))
            if progress is not None:
                progress(variant, variant, rows[-1])
    except Exception as exc:
        if isinstance(exc, (FileNotFoundError, ValueError)):
            raise
        err = ExperimentError(f"ablation aborted at {len(rows)} rows: {exc}")
        err.partial_rows = rows
        raise err from exc
    return rows


# -- persistence --------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def write_results_csv(rows: list[SweepRow], path) -> None:
    header = ["policy", "sweep", "value", "replications"]
    for name in METRIC_FIELDS:
        header += [f"{name}_mean", f"{name}_std"]
    header += [f"{name}_mean" for name in COUNT_FIELDS]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            record = [row.policy, row.sweep, _fmt(row.value), row.replications]
            for name in METRIC_FIELDS:
                record += [_fmt(row.means[name]), _fmt(row.stds[name])]
            record += [_fmt(row.counts[name]) for name in COUNT_FIELDS]
            writer.writerow(record)


def write_manifest(path, config: ExperimentConfig, kind: str, n_rows: int,
                   aborted: bool = False) -> None:
    manifest = {
        "artifact_version": __version__,
        "config_hash": config_hash(config),
        "kind": kind,
        "rows": n_rows,
        "aborted": aborted,
        "master_seed": config.experiments.master_seed,
        "replications": config.experiments.replications,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def export_plot_data(rows, metric: str, out_dir) -> list[str]:
    """One per-policy series file of (x, mean, std); returns written paths.

    Accepts SweepRow lists or dict rows read back from a results CSV.
    """
    from pathlib import Path

    column = METRIC_ALIASES.get(metric, metric)
    if column not in METRIC_FIELDS:
        known = sorted(set(METRIC_ALIASES) | set(METRIC_FIELDS))
        raise ValueError(f"unknown metric {metric!r}; known: {', '.join(known)}")
    if not rows:
        raise ValueError("no result rows to export")
    series: dict[str, list[tuple]] = {}
    for row in rows:
        if isinstance(row, SweepRow):
            policy, value = row.policy, row.value
            mean, std = row.means[column], row.stds[column]
        else:
            policy, value = row["policy"], row["value"]
            mean = row[f"{column}_mean"] or None
            std = row[f"{column}_std"] or None
        series.setdefault(policy, []).append((value, mean, std))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for policy, points in series.items():
        path = out / f"{policy}_{column}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "mean", "std"])
            for value, mean, std in points:
                writer.writerow([_fmt(value), _fmt(mean), _fmt(std)])
        written.append(str(path))
    return written
