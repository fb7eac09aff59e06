"""Slot-gated discrete-event simulator of a single-hop underwater uplink.

Decisions happen on a slot clock; transmissions, propagation and receptions
live in continuous time. A packet sent at t occupies the sink's hydrophone
over [t + d_prop, t + d_prop + d_tx]; any closed-interval overlap of two
reception windows destroys both packets (conflict), a lone packet decodes
against ambient noise through its faded SINR. Transmitters overhear each
other's packets (and the attached load annexes) unless their own transmit
intervals cover the reception, and the sink is half-duplex only in the sense
that it never transmits.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ChannelParams,
    LinkGain,
    decodes,
    sample_fading,
    sinr,
    transmission_loss,
)
from .loadinfo import (
    ANNEX_BYTES,
    NeighborLoadTable,
    pack_annex,
    unpack_annex,
)
from .modem import Modem
from .world import (
    DriftParams,
    NodeState,
    Packet,
    PhyStatus,
    estimate_traffic,
    generate_traffic,
    propagation_delay,
    step_mobility,
)


class EventOutcome(enum.Enum):
    PENDING = "pending"
    RECEIVED = "received"
    CONFLICT = "conflict"
    SINR_FAIL = "sinr_fail"


@dataclass
class TransmissionEvent:
    sender: int
    t_send: float
    t_arrive: float
    t_complete: float
    mode_index: int
    power_w: float
    wire_bytes: int
    gen_time: float
    gain: LinkGain
    energy_j: float
    outcome: EventOutcome = EventOutcome.PENDING

    @property
    def duration_s(self) -> float:
        return self.t_complete - self.t_arrive


@dataclass(frozen=True)
class PolicyDecision:
    """What one node does at a slot boundary."""

    transmit: bool
    mode_index: int | None = None
    power_w: float | None = None


WAIT_DECISION = PolicyDecision(transmit=False)


def decision_from_action(action) -> PolicyDecision:
    """Map an action-space entry (None = wait, or a ParetoSolution) to a
    decision."""
    if action is None:
        return WAIT_DECISION
    return PolicyDecision(True, action.mode_index, action.power_w)


def intervals_overlap(a_start, a_end, b_start, b_end) -> bool:
    """Closed-interval overlap; boundary contact counts."""
    return a_start <= b_end and b_start <= a_end


def detect_conflicts(events: list[TransmissionEvent]) -> list[bool]:
    """Flag every event whose reception window overlaps any other's."""
    n = len(events)
    if n == 0:
        return []
    arrive = np.array([e.t_arrive for e in events])
    complete = np.array([e.t_complete for e in events])
    overlap = (arrive[:, None] <= complete[None, :]) & (arrive[None, :] <= complete[:, None])
    np.fill_diagonal(overlap, False)
    return list(overlap.any(axis=1))


def occupancy(events: list[TransmissionEvent], t: float) -> int:
    """Number of reception windows covering time t (m_recv at the sink)."""
    return sum(1 for e in events if e.t_arrive <= t <= e.t_complete)


def resolve_reception(
    event: TransmissionEvent,
    overlapping: list[TransmissionEvent],
    channel: ChannelParams,
    threshold_db: float,
) -> EventOutcome:
    """Outcome of one completed reception.

    Any reception-window overlap is fatal for everyone involved; a packet
    alone on the hydrophone decodes iff its faded SINR meets the mode
    threshold.
    """
    if overlapping:
        return EventOutcome.CONFLICT
    gamma = sinr(event.power_w, event.gain, [], channel)
    if decodes(gamma, threshold_db):
        return EventOutcome.RECEIVED
    return EventOutcome.SINR_FAIL


@dataclass
class Scenario:
    """Everything one episode needs, already in runtime form."""

    channel: ChannelParams
    modem: Modem
    positions: list[np.ndarray]
    sink_position: np.ndarray
    payload_bytes: int = 190
    per_node_rate: float = 0.99
    slot_s: float = 1.0
    horizon_slots: int = 200
    sound_speed_ms: float = 1500.0
    battery_j: float = 1e6
    kappa: int = 5
    confidence_time_scale_s: float = 30.0
    recv_power_w: float = 0.395
    idle_power_w: float = 0.001
    fading: str = "rayleigh"
    drift: DriftParams = field(default_factory=DriftParams)
    delay_table: dict | None = None

    def __post_init__(self):
        if not self.positions:
            raise ValueError("scenario needs at least one transmitter")
        if self.payload_bytes <= 0 or self.horizon_slots <= 0 or self.slot_s <= 0:
            raise ValueError("payload_bytes, horizon_slots, slot_s must be positive")
        if self.per_node_rate < 0:
            raise ValueError("per_node_rate must be >= 0")
        if self.fading not in ("rayleigh", "unit"):
            raise ValueError("fading must be 'rayleigh' or 'unit'")
        self.positions = [np.asarray(p, dtype=float) for p in self.positions]
        self.sink_position = np.asarray(self.sink_position, dtype=float)

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def horizon_s(self) -> float:
        return self.horizon_slots * self.slot_s

    @property
    def sink_id(self) -> int:
        return self.n_nodes

    def propagation_delay_s(self, i: int) -> float:
        """Node-to-sink flight time at the deployment positions."""
        if self.delay_table is not None:
            key = (i, self.sink_id)
            if key in self.delay_table:
                return self.delay_table[key]
        return propagation_delay(
            self.positions[i], self.sink_position, self.sound_speed_ms
        )


@dataclass
class EnergyLedger:
    """Per-node and sink energy integrals over the observation window."""

    tx_j: list[float]
    recv_j: list[float]
    idle_j: list[float]
    sink_recv_j: float
    sink_idle_j: float

    def node_total(self, i: int) -> float:
        return self.tx_j[i] + self.recv_j[i] + self.idle_j[i]


@dataclass
class MetricsReport:
    """Episode metrics. Ratio metrics are None when their denominator is
    zero (absent, not zero)."""

    sent: int
    received: int
    conflicts: int
    sinr_failures: int
    pending: int
    throughput_pkt_s: float
    throughput_bit_s: float
    mean_delay_s: float | None
    energy_per_packet_j: float | None
    delivery_ratio: float | None
    utilization: float


def compute_metrics(
    events: list[TransmissionEvent], horizon_s: float
) -> MetricsReport:
    """Aggregate an event log into the five evaluation metrics."""
    sent = len(events)
    received = [e for e in events if e.outcome is EventOutcome.RECEIVED]
    conflicts = sum(1 for e in events if e.outcome is EventOutcome.CONFLICT)
    sinr_failures = sum(1 for e in events if e.outcome is EventOutcome.SINR_FAIL)
    pending = sum(1 for e in events if e.outcome is EventOutcome.PENDING)
    re = len(received)
    tx_energy = sum(e.energy_j for e in events)
    util = sum(e.duration_s for e in received) / horizon_s
    report = MetricsReport(
        sent=sent,
        received=re,
        conflicts=conflicts,
        sinr_failures=sinr_failures,
        pending=pending,
        throughput_pkt_s=re / horizon_s,
        throughput_bit_s=sum(e.wire_bytes * 8 for e in received) / horizon_s,
        mean_delay_s=(
            sum(e.t_complete - e.gen_time for e in received) / re if re else None
        ),
        energy_per_packet_j=(tx_energy / re if re else None),
        delivery_ratio=(re / sent if sent else None),
        utilization=util,
    )
    # structural identities; violations are engine bugs, not data
    assert sent == re + conflicts + sinr_failures + pending
    assert 0.0 <= report.utilization <= 1.0 + 1e-12
    if report.delivery_ratio is not None:
        assert abs(report.delivery_ratio * sent - re) < 1e-9
    return report


def _union_length(intervals, lo: float, hi: float) -> float:
    """Total measure of a union of intervals clipped to [lo, hi]."""
    clipped = sorted(
        (max(a, lo), min(b, hi)) for a, b in intervals if b > lo and a < hi
    )
    total = 0.0
    cur_a = cur_b = None
    for a, b in clipped:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total


@dataclass
class SlotResult:
    slot: int
    n_recv: int
    n_conf: int
    resolved: list[TransmissionEvent]


class Simulation:
    """One episode's mutable state, advanced slot by slot."""

    def __init__(self, scenario: Scenario, seed: int, annex_flags=None):
        self.sc = scenario
        n = scenario.n_nodes
        self.annex_flags = list(annex_flags) if annex_flags is not None else [False] * n
        if len(self.annex_flags) != n:
            raise ValueError("annex_flags must have one entry per transmitter")
        ss = (
            seed
            if isinstance(seed, np.random.SeedSequence)
            else np.random.SeedSequence(seed)
        )
        traffic_ss, fading_ss, mobility_ss, self.policy_ss = ss.spawn(4)
        self._traffic_rng = np.random.default_rng(traffic_ss)
        self._fading_rng = np.random.default_rng(fading_ss)
        self._mobility_rng = np.random.default_rng(mobility_ss)

        self.nodes = [
            NodeState(i, scenario.positions[i], scenario.battery_j, scenario.kappa)
            for i in range(n)
        ]
        self.tables = [NeighborLoadTable() for _ in range(n)]
        self.busy_until = [0.0] * n
        self.send_intervals: list[list[tuple[float, float]]] = [[] for _ in range(n)]
        self.recv_intervals: list[list[tuple[float, float]]] = [[] for _ in range(n)]
        self.sink_intervals: list[tuple[float, float]] = []
        self.tx_energy = [0.0] * n
        self.events: list[TransmissionEvent] = []
        self._active: list[TransmissionEvent] = []
        self._window: list[TransmissionEvent] = []
        self._overhears: list[tuple[float, float, int, int, bytes | None]] = []
        self.slot = 0
        self.slot_counts: list[tuple[int, int]] = []
        # widest packet this scenario can emit bounds how long an old event
        # can still overlap a new arrival
        wire_max = scenario.payload_bytes + ANNEX_BYTES
        self._window_span = (
            scenario.modem.tx_duration(wire_max, 1) + scenario.slot_s
        )

    # -- geometry ---------------------------------------------------------

    def _delay(self, i: int, j: int) -> float:
        """Propagation delay between node i and node j (sink id = n)."""
        table = self.sc.delay_table
        if table is not None:
            key = (i, j) if (i, j) in table else (j, i)
            if key in table:
                return table[key]
        pos_j = (
            self.sc.sink_position if j == self.sc.sink_id else self.nodes[j].position
        )
        return propagation_delay(self.nodes[i].position, pos_j, self.sc.sound_speed_ms)

    def _sink_distance_km(self, i: int) -> float:
        return (
            float(np.linalg.norm(self.nodes[i].position - self.sc.sink_position))
            / 1000.0
        )

    # -- observation side -------------------------------------------------

    def phy_status(self, i: int) -> PhyStatus:
        now = self.slot * self.sc.slot_s
        if self.busy_until[i] > now:
            return PhyStatus.SEND
        for complete, arrive, listener, _, _ in self._overhears:
            if listener == i and arrive <= now < complete:
                return PhyStatus.RECV
        return PhyStatus.IDLE

    def node_view(self, i: int) -> "NodeView":
        node = self.nodes[i]
        now = self.slot * self.sc.slot_s
        node.phy_status = self.phy_status(i)
        return NodeView(
            agent_index=i,
            slot=self.slot,
            now=now,
            phy_status=node.phy_status,
            position=node.position,
            queue_len=node.queue_len,
            busy=self.busy_until[i] > now,
            est=estimate_traffic(node.gen_history, self.sc.kappa),
            table=self.tables[i],
            neighbor_ids=[k for k in range(self.sc.n_nodes) if k != i],
        )

    # -- dynamics ---------------------------------------------------------

    def _send(self, i: int, decision: PolicyDecision, now: float) -> None:
        node = self.nodes[i]
        pkt: Packet = node.dequeue()
        annex = None
        wire = pkt.payload_bytes
        if self.annex_flags[i]:
            wire += ANNEX_BYTES
            est = estimate_traffic(node.gen_history, self.sc.kappa)
            annex = pack_annex(
                now, min(node.queue_len, 0xFFFF), min(est, 65535.0)
            )
        mode = self.sc.modem.mode(decision.mode_index)
        dtx = self.sc.modem.tx_duration(wire, decision.mode_index)
        energy = self.sc.modem.tx_energy(decision.power_w, wire, decision.mode_index)
        rho = (
            sample_fading(self._fading_rng) if self.sc.fading == "rayleigh" else 1.0
        )
        gain = LinkGain(
            transmission_loss(self._sink_distance_km(i), self.sc.channel), rho
        )
        d_sink = self._delay(i, self.sc.sink_id)
        ev = TransmissionEvent(
            sender=i,
            t_send=now,
            t_arrive=now + d_sink,
            t_complete=now + d_sink + dtx,
            mode_index=mode.index,
            power_w=decision.power_w,
            wire_bytes=wire,
            gen_time=pkt.gen_time,
            gain=gain,
            energy_j=energy,
        )
        self.events.append(ev)
        self._active.append(ev)
        self._window.append(ev)
        self.sink_intervals.append((ev.t_arrive, ev.t_complete))
        self.busy_until[i] = now + dtx
        self.send_intervals[i].append((now, now + dtx))
        self.tx_energy[i] += energy
        node.battery_j -= energy
        for k in range(self.sc.n_nodes):
            if k == i:
                continue
            a_k = now + self._delay(i, k)
            self._overhears.append((a_k + dtx, a_k, k, i, annex))

    def _sends_overlap(self, k: int, start: float, end: float) -> bool:
        for s, e in reversed(self.send_intervals[k]):
            if e < start:
                return False
            if s <= end:
                return True
        return False

    def step(self, decisions: list[PolicyDecision]) -> SlotResult:
        """Advance one slot: apply decisions at the boundary, then play the
        continuous interval out to the next boundary."""
        sc = self.sc
        if len(decisions) != sc.n_nodes:
            raise ValueError("need one decision per transmitter")
        if self.slot >= sc.horizon_slots:
            raise RuntimeError("episode horizon already reached")
        now0 = self.slot * sc.slot_s
        now1 = now0 + sc.slot_s

        for i, d in enumerate(decisions):
            if not d.transmit:
                continue
            if self.busy_until[i] > now0 or self.nodes[i].queue_len == 0:
                continue  # modem busy or nothing to send: a no-op
            self._send(i, d, now0)

        for i, node in enumerate(self.nodes):
            for pkt in generate_traffic(
                sc.per_node_rate, sc.payload_bytes, (now0, now1), self._traffic_rng
            ):
                node.enqueue(pkt)

        n_recv = n_conf = 0
        resolved = []
        still_active = []
        for ev in self._active:
            if ev.t_complete > now1:
                still_active.append(ev)
                continue
            overlapping = [
                o
                for o in self._window
                if o is not ev
                and intervals_overlap(ev.t_arrive, ev.t_complete, o.t_arrive, o.t_complete)
            ]
            ev.outcome = resolve_reception(
                ev, overlapping, sc.channel, sc.modem.mode(ev.mode_index).threshold_db
            )
            if ev.outcome is EventOutcome.RECEIVED:
                n_recv += 1
            elif ev.outcome is EventOutcome.CONFLICT:
                n_conf += 1
            resolved.append(ev)
        self._active = still_active

        keep_overhears = []
        for complete, arrive, k, src, annex in self._overhears:
            if complete > now1:
                keep_overhears.append((complete, arrive, k, src, annex))
                continue
            if self._sends_overlap(k, arrive, complete):
                continue  # listener was transmitting: reception lost
            self.recv_intervals[k].append((arrive, complete))
            if annex is not None:
                t_acq, qlen, est = unpack_annex(annex)
                self.tables[k].ingest(src, t_acq, qlen, est)
        self._overhears = keep_overhears

        cutoff = now0 - self._window_span
        self._window = [e for e in self._window if e.t_complete >= cutoff]

        if sc.drift.enabled:
            for node in self.nodes:
                node.position = step_mobility(
                    node.position, sc.drift, sc.slot_s, self._mobility_rng
                )

        self.slot += 1
        self.slot_counts.append((n_recv, n_conf))
        return SlotResult(self.slot - 1, n_recv, n_conf, resolved)

    # -- settlement -------------------------------------------------------

    def energy_ledger(self) -> EnergyLedger:
        sc = self.sc
        horizon = sc.horizon_s
        recv_j, idle_j = [], []
        for i in range(sc.n_nodes):
            recv_s = _union_length(self.recv_intervals[i], 0.0, horizon)
            send_s = _union_length(self.send_intervals[i], 0.0, horizon)
            idle_s = horizon - recv_s - send_s
            assert idle_s >= -1e-9, "send/recv bookkeeping exceeded the horizon"
            recv_j.append(sc.recv_power_w * recv_s)
            idle_j.append(sc.idle_power_w * max(idle_s, 0.0))
            self.nodes[i].battery_j -= recv_j[-1] + idle_j[-1]
        sink_recv_s = _union_length(self.sink_intervals, 0.0, horizon)
        return EnergyLedger(
            tx_j=list(self.tx_energy),
            recv_j=recv_j,
            idle_j=idle_j,
            sink_recv_j=sc.recv_power_w * sink_recv_s,
            sink_idle_j=sc.idle_power_w * (horizon - sink_recv_s),
        )


@dataclass
class NodeView:
    """What a policy may look at when deciding for one node."""

    agent_index: int
    slot: int
    now: float
    phy_status: PhyStatus
    position: np.ndarray
    queue_len: int
    busy: bool
    est: float
    table: NeighborLoadTable
    neighbor_ids: list[int]


@dataclass
class EpisodeResult:
    metrics: MetricsReport
    events: list[TransmissionEvent]
    slot_counts: list[tuple[int, int]]
    ledger: EnergyLedger


def run_episode(scenario: Scenario, policies, seed: int) -> EpisodeResult:
    """Drive one full episode with one policy object per transmitter."""
    if len(policies) != scenario.n_nodes:
        raise ValueError("need one policy per transmitter")
    annex = [getattr(p, "uses_load_annex", False) for p in policies]
    sim = Simulation(scenario, seed, annex_flags=annex)
    policy_seeds = sim.policy_ss.spawn(len(policies))
    for i, p in enumerate(policies):
        p.begin_episode(i, scenario, np.random.default_rng(policy_seeds[i]))
    for _ in range(scenario.horizon_slots):
        views = [sim.node_view(i) for i in range(scenario.n_nodes)]
        decisions = [p.act(v) for p, v in zip(policies, views)]
        sim.step(decisions)
    ledger = sim.energy_ledger()
    metrics = compute_metrics(sim.events, scenario.horizon_s)
    return EpisodeResult(metrics, sim.events, sim.slot_counts, ledger)


def write_event_log(path, events: list[TransmissionEvent]) -> None:
    """Line-delimited event log: sender t_send t_arrive t_complete mode power
    outcome."""
    with open(path, "w") as fh:
        fh.write("# sender t_send t_arrive t_complete mode power_w outcome\n")
        for e in events:
            fh.write(
                f"{e.sender} {e.t_send:.9g} {e.t_arrive:.9g} {e.t_complete:.9g} "
                f"{e.mode_index} {e.power_w:.9g} {e.outcome.value}\n"
            )
