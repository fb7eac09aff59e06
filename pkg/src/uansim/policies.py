"""Per-node transmission policies: learned-policy plumbing and baselines.

A policy owns one transmitter. The engine calls ``begin_episode`` once with
the agent index, the scenario, and a dedicated random generator, then
``act(view)`` every slot; the returned decision is either wait or a
(mode, power) pair. Baselines here are slotted Aloha (three parameter
variants), a near-far TDMA that packs sink receptions using per-node
propagation delays, and a uniform-random reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams, LinkGain, from_db, sinr, transmission_loss
from .engine import NodeView, PolicyDecision, Scenario, WAIT_DECISION, decision_from_action
from .modem import Modem
from .pareto import ParetoSolution


class ScheduleError(ValueError):
    """A TDMA schedule cannot be built under the given constraints."""


class AlohaPolicy:
    """Slotted Aloha: transmit fixed parameters whenever backlogged.

    ``send_prob`` gates each attempt; the default 1.0 matches nodes that
    transmit without regard for contention.
    """

    uses_load_annex = False

    def __init__(self, mode_index: int, power_w: float, send_prob: float = 1.0,
                 name: str = "aloha"):
        if not 0.0 < send_prob <= 1.0:
            raise ValueError("send_prob must be in (0, 1]")
        self.name = name
        self.mode_index = mode_index
        self.power_w = power_w
        self.send_prob = send_prob
        self._rng = None

    def begin_episode(self, agent_index: int, scenario: Scenario,
                      rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, view: NodeView) -> PolicyDecision:
        if view.queue_len == 0:
            return WAIT_DECISION
        if self.send_prob < 1.0 and self._rng.random() >= self.send_prob:
            return WAIT_DECISION
        return PolicyDecision(True, self.mode_index, self.power_w)


def aloha_plain(modem: Modem, send_prob: float = 1.0) -> AlohaPolicy:
    """Lowest mode at maximum power, the classic greedy variant."""
    lowest = min(m.index for m in modem.modes)
    return AlohaPolicy(lowest, modem.p_max, send_prob, name="aloha")


def aloha_min_energy(front: list[ParetoSolution], send_prob: float = 1.0) -> AlohaPolicy:
    best = min(front, key=lambda s: (s.energy_j, s.delay_s))
    return AlohaPolicy(best.mode_index, best.power_w, send_prob, name="aloha_min_energy")


def aloha_min_delay(front: list[ParetoSolution], send_prob: float = 1.0) -> AlohaPolicy:
    best = min(front, key=lambda s: (s.delay_s, s.energy_j))
    return AlohaPolicy(best.mode_index, best.power_w, send_prob, name="aloha_min_delay")


def min_power_for_mode(
    mode_index: int,
    distance_km: float,
    modem: Modem,
    channel: ChannelParams,
    margin_db: float = 0.0,
) -> float:
    """Smallest power whose nominal (unit-fading) SINR meets the mode
    threshold plus margin."""
    mode = modem.mode(mode_index)
    gain = LinkGain(transmission_loss(distance_km, channel), 1.0)
    gamma_per_watt = sinr(1.0, gain, [], channel)
    power = from_db(mode.threshold_db + margin_db) / gamma_per_watt
    if power > modem.p_max:
        raise ScheduleError(
            f"mode {mode_index} needs {power:.2f} W at {distance_km} km, "
            f"above the {modem.p_max} W limit"
        )
    return max(power, modem.p_min)


@dataclass(frozen=True)
class TdmaSchedule:
    frame_slots: int
    send_slots: tuple[int, ...]   # per node
    mode_index: int
    powers_w: tuple[float, ...]   # per node


def build_nf_tdma_schedule(
    scenario: Scenario,
    modem: Modem,
    channel: ChannelParams,
    margin_db: float = 0.0,
    frame_slots: int | None = None,
) -> TdmaSchedule:
    """Pack one reception per node into a frame using propagation offsets.

    Farther nodes are placed first so their longer flight times fill the
    head of the frame; each node takes the earliest slot whose reception
    interval at the sink clears every already-placed interval. The frame is
    the smallest slot count after which the pattern repeats without
    cross-frame overlap.
    """
    n = scenario.n_nodes
    mode_index = min(m.index for m in modem.modes)
    dur = modem.tx_duration(scenario.payload_bytes, mode_index)
    slot = scenario.slot_s
    delays = np.array([scenario.propagation_delay_s(i) for i in range(n)])
    distances = delays * scenario.sound_speed_ms / 1000.0
    powers = tuple(
        min_power_for_mode(mode_index, d, modem, channel, margin_db) for d in distances
    )

    order = sorted(range(n), key=lambda i: -delays[i])
    placed: list[tuple[float, float]] = []
    send_slots = [0] * n
    for i in order:
        s = 0
        while True:
            start = s * slot + delays[i]
            end = start + dur
            if all(end < a or start > b for a, b in placed):
                placed.append((start, end))
                send_slots[i] = s
                break
            s += 1

    arrivals = [s * slot + d for s, d in zip(send_slots, delays)]
    completions = [a + dur for a in arrivals]
    needed = int(np.floor((max(completions) - min(arrivals)) / slot)) + 1
    needed = max(needed, max(send_slots) + 1)
    if frame_slots is None:
        frame_slots = needed
    elif frame_slots < needed:
        raise ScheduleError(
            f"frame of {frame_slots} slots cannot hold the packed schedule "
            f"(needs {needed})"
        )
    return TdmaSchedule(frame_slots, tuple(send_slots), mode_index, powers)


class NfTdmaPolicy:
    """Transmit only in the node's owned slot of a precomputed frame."""

    uses_load_annex = False

    def __init__(self, schedule: TdmaSchedule):
        self.name = "nf_tdma"
        self.schedule = schedule
        self._slot = 0
        self._power = 0.0

    def begin_episode(self, agent_index: int, scenario: Scenario,
                      rng: np.random.Generator) -> None:
        self._slot = self.schedule.send_slots[agent_index]
        self._power = self.schedule.powers_w[agent_index]

    def act(self, view: NodeView) -> PolicyDecision:
        if view.queue_len == 0 or view.slot % self.schedule.frame_slots != self._slot:
            return WAIT_DECISION
        return PolicyDecision(True, self.schedule.mode_index, self._power)


class RandomPolicy:
    """Uniform choice over the reduced action space every slot."""

    uses_load_annex = False

    def __init__(self, action_space: list):
        if action_space[0] is not None:
            raise ValueError("action space must start with the wait entry")
        self.name = "random"
        self.action_space = action_space
        self._rng = None

    def begin_episode(self, agent_index: int, scenario: Scenario,
                      rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, view: NodeView) -> PolicyDecision:
        choice = self.action_space[int(self._rng.integers(len(self.action_space)))]
        return decision_from_action(choice)


class WaitPolicy:
    """Never transmits; useful as an inert bundle member."""

    uses_load_annex = False
    name = "wait"

    def begin_episode(self, agent_index: int, scenario: Scenario,
                      rng: np.random.Generator) -> None:
        pass

    def act(self, view: NodeView) -> PolicyDecision:
        return WAIT_DECISION


POLICY_NAMES = (
    "marl",
    "aloha",
    "aloha_min_energy",
    "aloha_min_delay",
    "nf_tdma",
    "random",
    "wait",
    "dr_dlma",
)


def policy_bundle(
    name: str,
    scenario: Scenario,
    modem: Modem,
    channel: ChannelParams,
    front: list[ParetoSolution] | None = None,
    action_space: list | None = None,
    checkpoint_path=None,
    send_prob: float = 1.0,
    margin_db: float = 0.0,
) -> list:
    """One initialized policy per transmitter for a named strategy."""
    n = scenario.n_nodes
    if name == "aloha":
        return [aloha_plain(modem, send_prob) for _ in range(n)]
    if name == "aloha_min_energy":
        if front is None:
            raise ValueError("aloha_min_energy requires a front")
        return [aloha_min_energy(front, send_prob) for _ in range(n)]
    if name == "aloha_min_delay":
        if front is None:
            raise ValueError("aloha_min_delay requires a front")
        return [aloha_min_delay(front, send_prob) for _ in range(n)]
    if name == "nf_tdma":
        schedule = build_nf_tdma_schedule(scenario, modem, channel, margin_db)
        return [NfTdmaPolicy(schedule) for _ in range(n)]
    if name == "random":
        if action_space is None:
            if front is None:
                raise ValueError("random requires a front or action space")
            action_space = [None] + list(front)
        return [RandomPolicy(action_space) for _ in range(n)]
    if name == "wait":
        return [WaitPolicy() for _ in range(n)]
    if name == "marl":
        if checkpoint_path is None:
            raise ValueError("marl requires a checkpoint path")
        from .marl import load_policy_bundle

        return load_policy_bundle(checkpoint_path, n)
    if name == "dr_dlma":
        raise NotImplementedError(
            "dr_dlma is a reserved baseline slot; its scheduling rule is not "
            "implemented here"
        )
    raise ValueError(f"unknown policy {name!r}; known: {', '.join(POLICY_NAMES)}")
