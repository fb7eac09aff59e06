"""Cooperative multi-agent scheduling learned with recurrent Q-learning.

Each transmitter runs the shared-parameter recurrent value network over its
local observation (own status and load, confidence-weighted overheard
neighbor loads) and picks from the reduced action set {wait} + front. Team
training mixes per-agent values additively (Q_team = sum_i Q_i), rewards the
whole team with omega * (n_recv - n_conf) per slot, and follows the usual
DQN furniture: replay of short windows with stored hidden states, a frozen
target network, epsilon-greedy annealing, periodic greedy evaluation with
best-checkpoint selection.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import qnet
from .engine import (
    NodeView,
    PolicyDecision,
    Scenario,
    Simulation,
    WAIT_DECISION,
    decision_from_action,
)
from .pareto import ParetoSolution
from .world import PhyStatus

_PHY_INDEX = {PhyStatus.IDLE: 0, PhyStatus.SEND: 1, PhyStatus.RECV: 2}

OBS_MODES = ("full", "local_load", "bare")


@dataclass(frozen=True)
class RewardConfig:
    """Team reward r = omega (n_recv - n_conf), omega = alpha/(lambda T)."""

    alpha: float = 100.0
    lambda_net: float = 0.99
    slot_s: float = 1.0
    horizon_slots: int = 200

    def __post_init__(self):
        if self.alpha <= 0 or self.lambda_net <= 0:
            raise ValueError("alpha and lambda_net must be positive")
        if self.slot_s <= 0 or self.horizon_slots <= 0:
            raise ValueError("slot_s and horizon_slots must be positive")

    @property
    def weight(self) -> float:
        return self.alpha / (self.lambda_net * self.slot_s * self.horizon_slots)


def team_reward(n_recv: int, n_conf: int, cfg: RewardConfig) -> float:
    if n_recv < 0 or n_conf < 0:
        raise ValueError("counts must be >= 0")
    return cfg.weight * (n_recv - n_conf)


def mix_team_value(per_agent_values) -> float:
    """Additive mixing: the team value is the sum of agent values."""
    return float(np.sum(per_agent_values))


def select_action(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties break toward the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))


def epsilon_schedule(
    episode: int, anneal_episodes: int, start: float = 1.0, end: float = 0.05
) -> float:
    """Linear from start at episode 1 to end at episode anneal_episodes,
    constant afterwards."""
    if episode < 1:
        raise ValueError("episodes are 1-based")
    if anneal_episodes < 2:
        raise ValueError("anneal_episodes must be >= 2")
    if episode >= anneal_episodes:
        return end
    frac = (episode - 1) / (anneal_episodes - 1)
    return start + (end - start) * frac


class ObservationEncoder:
    """Flat observation vectors from a NodeView.

    Layout (full mode): phy one-hot (3) | own position / scale (3) |
    own load <0, queue, est> (3) | per neighbor in id order:
    position / scale (3) + <CF, queue, est> (3) | agent one-hot (n).
    "local_load" drops the neighbor block, "bare" also drops own load.
    Queue and rate entries are clipped to fixed caps.
    """

    def __init__(
        self,
        n_agents: int,
        obs_mode: str = "full",
        neighbor_positions=None,
        position_scale_m: float = 5000.0,
        queue_cap: int = 50,
        est_cap: float = 5.0,
        confidence_time_scale_s: float = 30.0,
    ):
        if obs_mode not in OBS_MODES:
            raise ValueError(f"obs_mode must be one of {OBS_MODES}")
        if n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        self.n_agents = n_agents
        self.obs_mode = obs_mode
        self.position_scale_m = position_scale_m
        self.queue_cap = queue_cap
        self.est_cap = est_cap
        self.confidence_time_scale_s = confidence_time_scale_s
        self.neighbor_positions = (
            [np.asarray(p, float) for p in neighbor_positions]
            if neighbor_positions is not None
            else None
        )
        width = 3 + 3  # phy one-hot + own position
        if obs_mode in ("full", "local_load"):
            width += 3
        if obs_mode == "full":
            width += 6 * (n_agents - 1)
        width += n_agents
        self.width = width

    def encode(self, view: NodeView) -> np.ndarray:
        from .loadinfo import build_overhear_matrix

        out = np.zeros(self.width)
        out[_PHY_INDEX[view.phy_status]] = 1.0
        out[3:6] = view.position / self.position_scale_m
        pos = 6
        if self.obs_mode in ("full", "local_load"):
            out[pos] = 0.0  # own info is fresh by construction
            out[pos + 1] = min(view.queue_len, self.queue_cap) / self.queue_cap
            out[pos + 2] = min(view.est, self.est_cap) / self.est_cap
            pos += 3
        if self.obs_mode == "full":
            rows = build_overhear_matrix(
                view.table, view.neighbor_ids, view.now, self.confidence_time_scale_s
            )
            for nid, row in zip(view.neighbor_ids, rows):
                if self.neighbor_positions is not None:
                    out[pos : pos + 3] = (
                        self.neighbor_positions[nid] / self.position_scale_m
                    )
                pos += 3
                out[pos] = row.confidence
                out[pos + 1] = min(row.queue_len, self.queue_cap) / self.queue_cap
                out[pos + 2] = min(row.est, self.est_cap) / self.est_cap
                pos += 3
        out[pos + view.agent_index] = 1.0
        return out


@dataclass
class EpisodeTrace:
    """One rollout, stored for sequence replay."""

    obs: np.ndarray      # (T+1, N, I): boundary observations incl. terminal
    actions: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T,)
    hiddens: np.ndarray  # (T, N, H): hidden fed into each step at rollout

    @property
    def length(self) -> int:
        return self.actions.shape[0]


class ReplayBuffer:
    """Episode store with a transition-count capacity, evicting oldest."""

    def __init__(self, capacity_transitions: int):
        if capacity_transitions < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity_transitions
        self.episodes: deque[EpisodeTrace] = deque()
        self.total_transitions = 0

    def add(self, trace: EpisodeTrace) -> None:
        self.episodes.append(trace)
        self.total_transitions += trace.length
        while self.total_transitions > self.capacity and len(self.episodes) > 1:
            dropped = self.episodes.popleft()
            self.total_transitions -= dropped.length

    def sample_windows(self, batch_size: int, window: int, rng: np.random.Generator) -> dict:
        """Uniformly sampled fixed-length windows; the terminal flag is set
        on a window's last step when it closes its episode."""
        if not self.episodes:
            raise ValueError("replay buffer is empty")
        eps = list(self.episodes)
        if any(e.length < window for e in eps):
            raise ValueError("stored episode shorter than the replay window")
        obs, actions, rewards, done, h0 = [], [], [], [], []
        for _ in range(batch_size):
            e = eps[int(rng.integers(len(eps)))]
            s = int(rng.integers(e.length - window + 1))
            obs.append(e.obs[s : s + window + 1])
            actions.append(e.actions[s : s + window])
            rewards.append(e.rewards[s : s + window])
            d = np.zeros(window)
            if s + window == e.length:
                d[-1] = 1.0
            done.append(d)
            h0.append(e.hiddens[s])
        return {
            "obs": np.stack(obs),
            "actions": np.stack(actions),
            "rewards": np.stack(rewards),
            "done": np.stack(done),
            "h0": np.stack(h0),
        }


@dataclass(frozen=True)
class TrainConfig:
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
    updates_per_episode: int = 1
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    hidden_width: int = 64
    recurrent_width: int = 64

    def __post_init__(self):
        if self.episodes < 1 or self.anneal_episodes < 2:
            raise ValueError("episodes >= 1 and anneal_episodes >= 2 required")
        for name in (
            "batch_size", "window", "buffer_transitions", "target_sync_interval",
            "eval_interval", "eval_episodes", "updates_per_episode",
            "hidden_width", "recurrent_width",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.gamma <= 1 or self.learning_rate <= 0:
            raise ValueError("need 0 < gamma <= 1 and learning_rate > 0")


@dataclass
class TrainResult:
    spec: qnet.NetworkSpec
    params: dict
    best_episode: int
    best_eval_reward: float
    log: list[dict]
    sync_episodes: list[int]
    obs_mode: str
    encoder: ObservationEncoder
    action_space: list


class Trainer:
    """Centralized training of the shared recurrent Q-network."""

    def __init__(
        self,
        scenario: Scenario,
        action_space: list,
        obs_mode: str,
        train_cfg: TrainConfig,
        reward_cfg: RewardConfig,
        seed: int,
    ):
        if action_space[0] is not None:
            raise ValueError("action space must start with the wait entry")
        self.scenario = scenario
        self.action_space = action_space
        self.obs_mode = obs_mode
        self.cfg = train_cfg
        self.reward_cfg = reward_cfg
        self.n_agents = scenario.n_nodes
        self.encoder = ObservationEncoder(
            n_agents=self.n_agents,
            obs_mode=obs_mode,
            neighbor_positions=scenario.positions,
            confidence_time_scale_s=scenario.confidence_time_scale_s,
        )
        self.spec = qnet.NetworkSpec(
            input_width=self.encoder.width,
            hidden_width=train_cfg.hidden_width,
            recurrent_width=train_cfg.recurrent_width,
            output_width=len(action_space),
        )
        ss = np.random.SeedSequence(seed)
        init_ss, explore_ss, replay_ss, self._env_ss, eval_ss = ss.spawn(5)
        self._explore_rng = np.random.default_rng(explore_ss)
        self._replay_rng = np.random.default_rng(replay_ss)
        self._eval_seeds = eval_ss.spawn(train_cfg.eval_episodes)
        self.params = qnet.init_params(self.spec, np.random.default_rng(init_ss))
        self.target_params = qnet.sync_target(self.params)
        self.optimizer = qnet.RmsProp(self.spec)
        self.buffer = ReplayBuffer(train_cfg.buffer_transitions)
        self.annex_flags = [obs_mode == "full"] * self.n_agents

    def _decisions(self, action_ids) -> list[PolicyDecision]:
        return [decision_from_action(self.action_space[a]) for a in action_ids]

    def _rollout(self, env_seed, epsilon: float, record: bool):
        sc = self.scenario
        T, n, width = sc.horizon_slots, self.n_agents, self.encoder.width
        sim = Simulation(sc, env_seed, annex_flags=self.annex_flags)
        h = np.zeros((n, self.spec.recurrent_width))
        obs_hist = np.zeros((T + 1, n, width)) if record else None
        act_hist = np.zeros((T, n), dtype=int) if record else None
        rew_hist = np.zeros(T) if record else None
        hid_hist = np.zeros((T, n, self.spec.recurrent_width)) if record else None
        total = 0.0
        obs = np.stack([self.encoder.encode(sim.node_view(i)) for i in range(n)])
        for t in range(T):
            q, h_new = qnet.forward(self.params, obs, h)
            if epsilon > 0.0:
                acts = [select_action(q[i], epsilon, self._explore_rng) for i in range(n)]
            else:
                acts = [int(np.argmax(q[i])) for i in range(n)]
            if record:
                obs_hist[t] = obs
                act_hist[t] = acts
                hid_hist[t] = h
            res = sim.step(self._decisions(acts))
            r = team_reward(res.n_recv, res.n_conf, self.reward_cfg)
            total += r
            if record:
                rew_hist[t] = r
            h = h_new
            obs = np.stack([self.encoder.encode(sim.node_view(i)) for i in range(n)])
        if record:
            obs_hist[T] = obs
            trace = EpisodeTrace(obs_hist, act_hist, rew_hist, hid_hist)
        else:
            trace = None
        return total, trace, sim

    def train(self) -> TrainResult:
        cfg = self.cfg
        log: list[dict] = []
        sync_episodes: list[int] = []
        best_reward = -np.inf
        best_params = qnet.copy_params(self.params)
        best_episode = 0
        loss = float("nan")
        for episode in range(1, cfg.episodes + 1):
            eps = epsilon_schedule(
                episode, cfg.anneal_episodes, cfg.epsilon_start, cfg.epsilon_final
            )
            env_seed = self._env_ss.spawn(1)[0]
            _, trace, _ = self._rollout(env_seed, eps, record=True)
            self.buffer.add(trace)
            for _ in range(cfg.updates_per_episode):
                batch = self.buffer.sample_windows(
                    cfg.batch_size, cfg.window, self._replay_rng
                )
                loss = qnet.td_update(
                    self.params,
                    self.target_params,
                    self.optimizer,
                    batch,
                    cfg.gamma,
                    cfg.learning_rate,
                )
            if episode % cfg.target_sync_interval == 0:
                self.target_params = qnet.sync_target(self.params)
                sync_episodes.append(episode)
            if episode % cfg.eval_interval == 0:
                mean_reward = self.evaluate()
                if mean_reward > best_reward:
                    best_reward = mean_reward
                    best_params = qnet.copy_params(self.params)
                    best_episode = episode
                log.append(
                    {
                        "episode": episode,
                        "mean_eval_reward": mean_reward,
                        "loss": loss,
                        "epsilon": eps,
                    }
                )
        if best_episode == 0:  # training shorter than one eval interval
            best_params = qnet.copy_params(self.params)
            best_episode = cfg.episodes
            best_reward = self.evaluate()
        return TrainResult(
            spec=self.spec,
            params=best_params,
            best_episode=best_episode,
            best_eval_reward=best_reward,
            log=log,
            sync_episodes=sync_episodes,
            obs_mode=self.obs_mode,
            encoder=self.encoder,
            action_space=self.action_space,
        )

    def evaluate(self, params: dict | None = None) -> float:
        """Mean greedy episode reward over the fixed evaluation seeds."""
        saved = self.params
        if params is not None:
            self.params = params
        try:
            totals = [
                self._rollout(seed, 0.0, record=False)[0] for seed in self._eval_seeds
            ]
        finally:
            self.params = saved
        return float(np.mean(totals))


class MarlPolicy:
    """Greedy execution of a trained checkpoint for one node.

    All instances of a bundle share the parameter dict; each keeps its own
    recurrent state. When a slot's observation is unavailable (None), the
    previous decision is repeated.
    """

    name = "marl"

    def __init__(self, spec, params, encoder: ObservationEncoder, action_space: list):
        self.spec = spec
        self.params = params
        self.encoder = encoder
        self.action_space = action_space
        self.uses_load_annex = encoder.obs_mode == "full"
        self._hidden = np.zeros((1, spec.recurrent_width))
        self._last = WAIT_DECISION

    def begin_episode(self, agent_index: int, scenario, rng) -> None:
        self._hidden = np.zeros((1, self.spec.recurrent_width))
        self._last = WAIT_DECISION

    def act(self, view: NodeView | None) -> PolicyDecision:
        if view is None:
            return self._last
        obs = self.encoder.encode(view)
        q, self._hidden = qnet.forward(self.params, obs, self._hidden)
        action = self.action_space[int(np.argmax(q[0]))]
        self._last = decision_from_action(action)
        return self._last


def save_policy_checkpoint(
    path, result: TrainResult, seed: int, scenario: Scenario
) -> None:
    """Binary checkpoint plus enough metadata to rebuild execution policies."""
    meta = {
        "obs_mode": result.obs_mode,
        "n_agents": result.encoder.n_agents,
        "position_scale_m": result.encoder.position_scale_m,
        "queue_cap": result.encoder.queue_cap,
        "est_cap": result.encoder.est_cap,
        "confidence_time_scale_s": result.encoder.confidence_time_scale_s,
        "neighbor_positions": [list(map(float, p)) for p in scenario.positions],
        "payload_bytes": scenario.payload_bytes,
        "per_node_rate": scenario.per_node_rate,
        "action_space": [
            [s.mode_index, s.power_w, s.delay_s, s.energy_j]
            for s in result.action_space[1:]
        ],
        "seed": seed,
        "best_episode": result.best_episode,
        "best_eval_reward": result.best_eval_reward,
    }
    qnet.save_checkpoint(path, result.spec, result.params, meta)


def write_checkpoint_manifest(path, checkpoint_path, result: TrainResult, seed: int) -> None:
    """Human-readable sidecar for a checkpoint."""
    with open(path, "w") as fh:
        fh.write(f"checkpoint: {checkpoint_path}\n")
        fh.write(
            "network: input={} hidden={} recurrent={} outputs={}\n".format(
                result.spec.input_width,
                result.spec.hidden_width,
                result.spec.recurrent_width,
                result.spec.output_width,
            )
        )
        fh.write(f"observation mode: {result.obs_mode}\n")
        fh.write(f"seed: {seed}\n")
        fh.write(f"best episode: {result.best_episode}\n")
        fh.write(f"best mean eval reward: {result.best_eval_reward:.9g}\n")


def load_policy_bundle(path, n_agents: int) -> list[MarlPolicy]:
    """One shared-parameter execution policy per transmitter."""
    spec, params, meta = qnet.load_checkpoint(path)
    if meta.get("n_agents") != n_agents:
        raise ValueError(
            f"checkpoint was trained for {meta.get('n_agents')} agents, "
            f"scenario has {n_agents}"
        )
    encoder = ObservationEncoder(
        n_agents=n_agents,
        obs_mode=meta["obs_mode"],
        neighbor_positions=meta["neighbor_positions"],
        position_scale_m=meta["position_scale_m"],
        queue_cap=meta["queue_cap"],
        est_cap=meta["est_cap"],
        confidence_time_scale_s=meta["confidence_time_scale_s"],
    )
    action_space = [None] + [
        ParetoSolution(int(m), float(p), float(d), float(e))
        for m, p, d, e in meta["action_space"]
    ]
    if len(action_space) != spec.output_width:
        raise ValueError("checkpoint action space disagrees with network width")
    return [MarlPolicy(spec, params, encoder, action_space) for _ in range(n_agents)]
