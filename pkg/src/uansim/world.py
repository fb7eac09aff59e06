"""Node state, Poisson traffic, rate estimation, drift mobility, geometry."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


class PhyStatus(enum.Enum):
    IDLE = "idle"
    SEND = "send"
    RECV = "recv"


@dataclass(frozen=True)
class Packet:
    gen_time: float
    payload_bytes: int


@dataclass(frozen=True)
class DriftParams:
    """Slow current drift: X' = X + v dt + sigma * N(0, I3)."""

    enabled: bool = False
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sigma: float = 0.0


@dataclass
class NodeState:
    """One transmitter: position, queue, battery, generation history."""

    node_id: int
    position: np.ndarray
    battery_j: float
    kappa: int = 5
    phy_status: PhyStatus = PhyStatus.IDLE
    queue: deque = field(default_factory=deque)
    gen_history: deque = field(init=False)

    def __post_init__(self):
        if self.kappa < 2:
            raise ValueError("kappa must be >= 2")
        self.position = np.asarray(self.position, dtype=float)
        self.gen_history = deque(maxlen=self.kappa)

    def enqueue(self, packet: Packet) -> None:
        self.queue.append(packet)
        self.gen_history.append(packet.gen_time)

    def dequeue(self) -> Packet:
        return self.queue.popleft()

    @property
    def queue_len(self) -> int:
        return len(self.queue)


def generate_traffic(
    rate_pkt_s: float,
    payload_bytes: int,
    window: tuple[float, float],
    rng: np.random.Generator,
) -> list[Packet]:
    """Poisson arrivals in [t0, t1): count ~ Poisson(rate * (t1-t0)),
    timestamps uniform in the window, returned sorted."""
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("window must have positive length")
    if rate_pkt_s < 0:
        raise ValueError("rate_pkt_s must be >= 0")
    if rate_pkt_s == 0:
        return []
    count = int(rng.poisson(rate_pkt_s * (t1 - t0)))
    times = np.sort(t0 + rng.random(count) * (t1 - t0))
    return [Packet(float(t), payload_bytes) for t in times]


def estimate_traffic(timestamps, kappa: int) -> float:
    """Generation-rate estimate over the last min(kappa, available) timestamps.

    est = (k - 1) / (t_latest - t_earliest); 0 when fewer than two samples
    are available (or the span is degenerate).
    """
    if kappa < 2:
        raise ValueError("kappa must be >= 2")
    ts = list(timestamps)[-kappa:]
    if len(ts) < 2:
        return 0.0
    span = max(ts) - min(ts)
    if span <= 0:
        return 0.0
    return (len(ts) - 1) / span


def step_mobility(
    position: np.ndarray,
    drift: DriftParams,
    dt: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One drift step. With drift disabled the position is returned as-is."""
    if not drift.enabled:
        return position
    v = np.asarray(drift.velocity, dtype=float)
    return position + v * dt + drift.sigma * rng.standard_normal(3)


def propagation_delay(pos_a: np.ndarray, pos_b: np.ndarray, sound_speed_ms: float) -> float:
    """Straight-line acoustic delay in seconds. Coincident points are an error."""
    if sound_speed_ms <= 0:
        raise ValueError("sound_speed_ms must be positive")
    d = float(np.linalg.norm(np.asarray(pos_a, float) - np.asarray(pos_b, float)))
    if d == 0.0:
        raise ValueError("coincident positions have no defined propagation delay")
    return d / sound_speed_ms


def ring_positions(distances_m, sink=(0.0, 0.0, 0.0)) -> list[np.ndarray]:
    """Deterministic layout: node i at distance d_i from the sink, azimuths
    spread evenly around the circle (depth 0)."""
    sink = np.asarray(sink, dtype=float)
    n = len(distances_m)
    out = []
    for i, d in enumerate(distances_m):
        if d <= 0:
            raise ValueError("distances must be positive")
        theta = 2.0 * math.pi * i / max(n, 1)
        out.append(sink + np.array([d * math.cos(theta), d * math.sin(theta), 0.0]))
    return out
