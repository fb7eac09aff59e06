"""Experiment configuration: a validated YAML key-tree with presets.

Precedence is defaults (chosen by preset) < config file < CLI flags. The
effective configuration can be echoed back out as YAML so a result directory
records exactly what produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from .channel import ChannelParams
from .engine import Scenario
from .modem import DEFAULT_MODES, FramingParams, Modem
from .pareto import GAParams
from .marl import OBS_MODES, RewardConfig, TrainConfig
from .world import DriftParams, ring_positions


class ConfigError(ValueError):
    """Bad configuration content, reported with a dotted key path."""


DEFAULT_RATE_SWEEP = tuple(round(0.03 + 0.12 * k, 2) for k in range(18))
DEFAULT_PAYLOAD_SWEEP = (100, 150, 200, 250, 300, 350, 400)

SWEEP_POLICIES = ("aloha", "aloha_min_energy", "aloha_min_delay", "nf_tdma", "random")

PRESETS = ("desk", "full")


@dataclass(frozen=True)
class ScenarioConfig:
    distances_km: tuple[float, ...] = (3.0, 4.0, 5.0)
    payload_bytes: int = 200
    per_node_rate: float = 0.99
    slot_s: float = 1.0
    horizon_slots: int = 200
    sound_speed_ms: float = 1500.0
    fading: str = "rayleigh"
    battery_j: float = 1e6
    kappa: int = 5
    confidence_time_scale_s: float = 30.0
    recv_power_w: float = 0.395
    idle_power_w: float = 0.001
    drift_enabled: bool = False
    drift_velocity_ms: tuple[float, float, float] = (0.0, 0.0, 0.0)
    drift_sigma_ms: float = 0.0


@dataclass(frozen=True)
class FrontConfig:
    design_distance_km: float = 5.0
    u_target: int = 3
    source: str = "grid"  # parameter source for baselines: "grid" or "ga"
    grid_step_w: float = 0.5
    population: int = 500
    generations: int = 500
    crossover_prob: float = 0.9
    mode_mutation_prob: float = 0.1
    power_sigma_w: float = 2.0
    power_grid_w: float | None = None


@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 20000
    anneal_episodes: int = 10000
    batch_size: int = 32
    window: int = 8
    buffer_transitions: int = 10000
    learning_rate: float = 5e-4
    gamma: float = 0.99
    target_sync_interval: int = 200
    eval_interval: int = 200
    eval_episodes: int = 20
    obs_mode: str = "full"
    reward_alpha: float = 100.0


@dataclass(frozen=True)
class ExperimentsConfig:
    policies: tuple[str, ...] = SWEEP_POLICIES
    rate_sweep: tuple[float, ...] = DEFAULT_RATE_SWEEP
    payload_sweep: tuple[int, ...] = DEFAULT_PAYLOAD_SWEEP
    payload_sweep_rate: float = 0.99
    replications: int = 20
    master_seed: int = 1


@dataclass(frozen=True)
class ArtifactsConfig:
    front_path: str | None = None
    checkpoint_path: str | None = None
    ablation_full_path: str | None = None
    ablation_local_load_path: str | None = None
    ablation_bare_path: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    front: FrontConfig = field(default_factory=FrontConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    experiments: ExperimentsConfig = field(default_factory=ExperimentsConfig)
    artifacts: ArtifactsConfig = field(default_factory=ArtifactsConfig)


def preset_config(preset: str = "desk") -> ExperimentConfig:
    """Baseline defaults; "desk" is the fast profile, "full" scales training
    and replication counts up to campaign size."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    cfg = ExperimentConfig()
    if preset == "full":
        cfg = replace(
            cfg,
            training=replace(
                cfg.training, episodes=200000, anneal_episodes=100000
            ),
            experiments=replace(cfg.experiments, replications=100),
        )
    return cfg


# -- schema-checked loading -------------------------------------------------


def _require_mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _take(section: dict, key: str, path: str, kind, default, pred=None, desc=""):
    if key in section:
        value = section.pop(key)
    else:
        return default
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(
            f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, "
            f"got {type(value).__name__}"
        )
    if pred is not None and not pred(value):
        raise ConfigError(f"{path}.{key}: {desc or 'invalid value'} (got {value!r})")
    return value


def _reject_unknown(section: dict, path: str) -> None:
    if section:
        raise ConfigError(f"{path}: unknown keys {sorted(section)}")


def _number_list(value, path: str, minimum=None) -> tuple:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{path}: expected a non-empty list")
    out = []
    for i, x in enumerate(value):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{path}[{i}]: expected a number")
        if minimum is not None and x < minimum:
            raise ConfigError(f"{path}[{i}]: must be >= {minimum}")
        out.append(x)
    return tuple(out)


def parse_config(tree: dict, preset: str = "desk") -> ExperimentConfig:
    """Validate a parsed YAML tree against the schema, filling defaults."""
    base = preset_config(preset)
    tree = dict(_require_mapping(tree, "config"))

    sc = _require_mapping(tree.pop("scenario", None), "scenario")
    d = base.scenario
    pos = lambda v: v > 0
    nonneg = lambda v: v >= 0
    distances = sc.pop("distances_km", list(d.distances_km))
    distances = _number_list(distances, "scenario.distances_km", minimum=1e-9)
    drift = _require_mapping(sc.pop("drift", None), "scenario.drift")
    velocity = drift.pop("velocity_ms", list(d.drift_velocity_ms))
    velocity = _number_list(velocity, "scenario.drift.velocity_ms")
    if len(velocity) != 3:
        raise ConfigError("scenario.drift.velocity_ms: expected 3 components")
    scenario = ScenarioConfig(
        distances_km=tuple(float(x) for x in distances),
        payload_bytes=_take(sc, "payload_bytes", "scenario", int, d.payload_bytes, pos, "must be > 0"),
        per_node_rate=_take(sc, "per_node_rate", "scenario", float, d.per_node_rate, nonneg, "must be >= 0"),
        slot_s=_take(sc, "slot_s", "scenario", float, d.slot_s, pos, "must be > 0"),
        horizon_slots=_take(sc, "horizon_slots", "scenario", int, d.horizon_slots, pos, "must be > 0"),
        sound_speed_ms=_take(sc, "sound_speed_ms", "scenario", float, d.sound_speed_ms, pos, "must be > 0"),
        fading=_take(sc, "fading", "scenario", str, d.fading, lambda v: v in ("rayleigh", "unit"), "must be 'rayleigh' or 'unit'"),
        battery_j=_take(sc, "battery_j", "scenario", float, d.battery_j, pos, "must be > 0"),
        kappa=_take(sc, "kappa", "scenario", int, d.kappa, lambda v: v >= 2, "must be >= 2"),
        confidence_time_scale_s=_take(sc, "confidence_time_scale_s", "scenario", float, d.confidence_time_scale_s, pos, "must be > 0"),
        recv_power_w=_take(sc, "recv_power_w", "scenario", float, d.recv_power_w, nonneg, "must be >= 0"),
        idle_power_w=_take(sc, "idle_power_w", "scenario", float, d.idle_power_w, nonneg, "must be >= 0"),
        drift_enabled=_take(drift, "enabled", "scenario.drift", bool, d.drift_enabled),
        drift_velocity_ms=tuple(float(x) for x in velocity),
        drift_sigma_ms=_take(drift, "sigma_ms", "scenario.drift", float, d.drift_sigma_ms, nonneg, "must be >= 0"),
    )
    _reject_unknown(drift, "scenario.drift")
    _reject_unknown(sc, "scenario")

    ch = _require_mapping(tree.pop("channel", None), "channel")
    c = base.channel
    try:
        channel = ChannelParams(
            carrier_freq_khz=_take(ch, "carrier_freq_khz", "channel", float, c.carrier_freq_khz),
            bandwidth_hz=_take(ch, "bandwidth_hz", "channel", float, c.bandwidth_hz),
            transducer_efficiency=_take(ch, "transducer_efficiency", "channel", float, c.transducer_efficiency),
            anomaly_db=_take(ch, "anomaly_db", "channel", float, c.anomaly_db),
            shipping_factor=_take(ch, "shipping_factor", "channel", float, c.shipping_factor),
            wind_speed_ms=_take(ch, "wind_speed_ms", "channel", float, c.wind_speed_ms),
            source_level_ref_db=_take(ch, "source_level_ref_db", "channel", float, c.source_level_ref_db),
        )
    except ValueError as exc:
        raise ConfigError(f"channel: {exc}") from exc
    _reject_unknown(ch, "channel")

    fr = _require_mapping(tree.pop("front", None), "front")
    f = base.front
    grid_w = _take(fr, "power_grid_w", "front", float, f.power_grid_w, pos, "must be > 0") if fr.get("power_grid_w") is not None else f.power_grid_w
    fr.pop("power_grid_w", None)
    front = FrontConfig(
        design_distance_km=_take(fr, "design_distance_km", "front", float, f.design_distance_km, pos, "must be > 0"),
        u_target=_take(fr, "u_target", "front", int, f.u_target, lambda v: v >= 1, "must be >= 1"),
        source=_take(fr, "source", "front", str, f.source, lambda v: v in ("grid", "ga"), "must be 'grid' or 'ga'"),
        grid_step_w=_take(fr, "grid_step_w", "front", float, f.grid_step_w, pos, "must be > 0"),
        population=_take(fr, "population", "front", int, f.population, lambda v: v >= 4 and v % 2 == 0, "must be an even number >= 4"),
        generations=_take(fr, "generations", "front", int, f.generations, pos, "must be > 0"),
        crossover_prob=_take(fr, "crossover_prob", "front", float, f.crossover_prob, lambda v: 0 <= v <= 1, "must be in [0,1]"),
        mode_mutation_prob=_take(fr, "mode_mutation_prob", "front", float, f.mode_mutation_prob, lambda v: 0 <= v <= 1, "must be in [0,1]"),
        power_sigma_w=_take(fr, "power_sigma_w", "front", float, f.power_sigma_w, nonneg, "must be >= 0"),
        power_grid_w=grid_w,
    )
    _reject_unknown(fr, "front")

    tr = _require_mapping(tree.pop("training", None), "training")
    t = base.training
    training = TrainingConfig(
        episodes=_take(tr, "episodes", "training", int, t.episodes, pos, "must be > 0"),
        anneal_episodes=_take(tr, "anneal_episodes", "training", int, t.anneal_episodes, lambda v: v >= 2, "must be >= 2"),
        batch_size=_take(tr, "batch_size", "training", int, t.batch_size, pos, "must be > 0"),
        window=_take(tr, "window", "training", int, t.window, pos, "must be > 0"),
        buffer_transitions=_take(tr, "buffer_transitions", "training", int, t.buffer_transitions, pos, "must be > 0"),
        learning_rate=_take(tr, "learning_rate", "training", float, t.learning_rate, pos, "must be > 0"),
        gamma=_take(tr, "gamma", "training", float, t.gamma, lambda v: 0 < v <= 1, "must be in (0,1]"),
        target_sync_interval=_take(tr, "target_sync_interval", "training", int, t.target_sync_interval, pos, "must be > 0"),
        eval_interval=_take(tr, "eval_interval", "training", int, t.eval_interval, pos, "must be > 0"),
        eval_episodes=_take(tr, "eval_episodes", "training", int, t.eval_episodes, pos, "must be > 0"),
        obs_mode=_take(tr, "obs_mode", "training", str, t.obs_mode, lambda v: v in OBS_MODES, f"must be one of {OBS_MODES}"),
        reward_alpha=_take(tr, "reward_alpha", "training", float, t.reward_alpha, pos, "must be > 0"),
    )
    _reject_unknown(tr, "training")

    ex = _require_mapping(tree.pop("experiments", None), "experiments")
    e = base.experiments
    policies = ex.pop("policies", list(e.policies))
    if not isinstance(policies, (list, tuple)) or not policies or not all(
        isinstance(p, str) for p in policies
    ):
        raise ConfigError("experiments.policies: expected a non-empty list of names")
    rate_sweep = _number_list(
        ex.pop("rate_sweep", list(e.rate_sweep)), "experiments.rate_sweep", minimum=0.0
    )
    payload_sweep = ex.pop("payload_sweep", list(e.payload_sweep))
    payload_sweep = _number_list(payload_sweep, "experiments.payload_sweep", minimum=1)
    if any(int(p) != p for p in payload_sweep):
        raise ConfigError("experiments.payload_sweep: entries must be integers")
    experiments = ExperimentsConfig(
        policies=tuple(policies),
        rate_sweep=tuple(float(x) for x in rate_sweep),
        payload_sweep=tuple(int(x) for x in payload_sweep),
        payload_sweep_rate=_take(ex, "payload_sweep_rate", "experiments", float, e.payload_sweep_rate, pos, "must be > 0"),
        replications=_take(ex, "replications", "experiments", int, e.replications, pos, "must be >= 1"),
        master_seed=_take(ex, "master_seed", "experiments", int, e.master_seed),
    )
    _reject_unknown(ex, "experiments")

    ar = _require_mapping(tree.pop("artifacts", None), "artifacts")
    a = base.artifacts

    def opt_str(key, dflt):
        # paths are optional: an explicit null means "not set"
        if key in ar and ar[key] is None:
            ar.pop(key)
            return None
        return _take(ar, key, "artifacts", str, dflt)
    artifacts = ArtifactsConfig(
        front_path=opt_str("front_path", a.front_path),
        checkpoint_path=opt_str("checkpoint_path", a.checkpoint_path),
        ablation_full_path=opt_str("ablation_full_path", a.ablation_full_path),
        ablation_local_load_path=opt_str("ablation_local_load_path", a.ablation_local_load_path),
        ablation_bare_path=opt_str("ablation_bare_path", a.ablation_bare_path),
    )
    _reject_unknown(ar, "artifacts")
    _reject_unknown(tree, "config")

    return ExperimentConfig(scenario, channel, front, training, experiments, artifacts)


def load_config(path, preset: str = "desk") -> ExperimentConfig:
    try:
        with open(path) as fh:
            tree = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}")
    return parse_config(tree if tree is not None else {}, preset)


# -- effective-config echo and hashing ---------------------------------------


def effective_tree(cfg: ExperimentConfig) -> dict:
    """The full configuration as a plain nested mapping, defaults included."""
    s, e = cfg.scenario, cfg.experiments
    return {
        "scenario": {
            "distances_km": list(s.distances_km),
            "payload_bytes": s.payload_bytes,
            "per_node_rate": s.per_node_rate,
            "slot_s": s.slot_s,
            "horizon_slots": s.horizon_slots,
            "sound_speed_ms": s.sound_speed_ms,
            "fading": s.fading,
            "battery_j": s.battery_j,
            "kappa": s.kappa,
            "confidence_time_scale_s": s.confidence_time_scale_s,
            "recv_power_w": s.recv_power_w,
            "idle_power_w": s.idle_power_w,
            "drift": {
                "enabled": s.drift_enabled,
                "velocity_ms": list(s.drift_velocity_ms),
                "sigma_ms": s.drift_sigma_ms,
            },
        },
        "channel": asdict(cfg.channel),
        "front": asdict(cfg.front),
        "training": asdict(cfg.training),
        "experiments": {
            "policies": list(e.policies),
            "rate_sweep": list(e.rate_sweep),
            "payload_sweep": list(e.payload_sweep),
            "payload_sweep_rate": e.payload_sweep_rate,
            "replications": e.replications,
            "master_seed": e.master_seed,
        },
        "artifacts": asdict(cfg.artifacts),
    }


def write_effective_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(effective_tree(cfg), fh, sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(effective_tree(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


# -- runtime assembly ---------------------------------------------------------


def build_modem(cfg: ExperimentConfig) -> Modem:
    return Modem(DEFAULT_MODES, FramingParams())


def build_ga_params(cfg: ExperimentConfig) -> GAParams:
    f = cfg.front
    return GAParams(
        population=f.population,
        generations=f.generations,
        crossover_prob=f.crossover_prob,
        mode_mutation_prob=f.mode_mutation_prob,
        power_sigma_w=f.power_sigma_w,
        power_grid_w=f.power_grid_w,
    )


def build_train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.training
    return TrainConfig(
        episodes=t.episodes,
        anneal_episodes=t.anneal_episodes,
        batch_size=t.batch_size,
        window=t.window,
        buffer_transitions=t.buffer_transitions,
        learning_rate=t.learning_rate,
        gamma=t.gamma,
        target_sync_interval=t.target_sync_interval,
        eval_interval=t.eval_interval,
        eval_episodes=t.eval_episodes,
    )


def build_reward_config(cfg: ExperimentConfig, per_node_rate=None) -> RewardConfig:
    s = cfg.scenario
    return RewardConfig(
        alpha=cfg.training.reward_alpha,
        lambda_net=per_node_rate if per_node_rate is not None else s.per_node_rate,
        slot_s=s.slot_s,
        horizon_slots=s.horizon_slots,
    )


def build_scenario(
    cfg: ExperimentConfig,
    payload_bytes: int | None = None,
    per_node_rate: float | None = None,
) -> Scenario:
    s = cfg.scenario
    positions = ring_positions([d * 1000.0 for d in s.distances_km])
    return Scenario(
        channel=cfg.channel,
        modem=build_modem(cfg),
        positions=positions,
        sink_position=np.zeros(3),
        payload_bytes=payload_bytes if payload_bytes is not None else s.payload_bytes,
        per_node_rate=per_node_rate if per_node_rate is not None else s.per_node_rate,
        slot_s=s.slot_s,
        horizon_slots=s.horizon_slots,
        sound_speed_ms=s.sound_speed_ms,
        battery_j=s.battery_j,
        kappa=s.kappa,
        confidence_time_scale_s=s.confidence_time_scale_s,
        recv_power_w=s.recv_power_w,
        idle_power_w=s.idle_power_w,
        fading=s.fading,
        drift=DriftParams(
            enabled=s.drift_enabled,
            velocity=s.drift_velocity_ms,
            sigma=s.drift_sigma_ms,
        ),
    )
