"""Neighbor traffic-load awareness.

Each data packet can carry a 10-byte annex <t_acquire, queue_len, est>;
listeners keep a latest-wins table per source and turn entries into
confidence-weighted observations CF = tanh(age / a). Absent neighbors read as
<1, 0, 0>: maximally stale, empty.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

ANNEX_BYTES = 10
# wire layout: float32 t_acquire (s), uint16 queue_len, uint32 est in Q16.16
_ANNEX_FMT = "<fHI"
_EST_SCALE = 2**16


@dataclass(frozen=True)
class NeighborLoadEntry:
    source_id: int
    t_acquire: float
    queue_len: int
    est: float


@dataclass(frozen=True)
class OverhearInfo:
    """One observation row: staleness confidence + load snapshot."""

    confidence: float
    queue_len: int
    est: float


ABSENT = OverhearInfo(confidence=1.0, queue_len=0, est=0.0)


def confidence(age_s: float, time_scale_s: float) -> float:
    """CF = tanh(age / a): 0 for fresh, asymptotically 1 for stale.

    Negative ages and non-positive time scales are rejected.
    """
    if time_scale_s <= 0:
        raise ValueError("time_scale_s must be positive")
    if age_s < 0:
        raise ValueError(f"negative information age {age_s}")
    return math.tanh(age_s / time_scale_s)


class NeighborLoadTable:
    """Latest-wins store of overheard load annexes, keyed by source id."""

    def __init__(self):
        self._entries: dict[int, NeighborLoadEntry] = {}

    def ingest(self, source_id: int, t_acquire: float, queue_len: int, est: float) -> None:
        if queue_len < 0 or est < 0:
            raise ValueError("queue_len and est must be >= 0")
        current = self._entries.get(source_id)
        if current is not None and current.t_acquire > t_acquire:
            return
        self._entries[source_id] = NeighborLoadEntry(source_id, t_acquire, queue_len, est)

    def get(self, source_id: int) -> NeighborLoadEntry | None:
        return self._entries.get(source_id)

    def __len__(self) -> int:
        return len(self._entries)


def build_overhear_matrix(
    table: NeighborLoadTable,
    neighbor_ids,
    now: float,
    time_scale_s: float,
) -> list[OverhearInfo]:
    """Fixed-width observation block, one row per neighbor id in list order.

    Rows for neighbors never heard from are the ABSENT sentinel. An entry
    acquired in the future relative to `now` indicates clock skew and is an
    error.
    """
    rows = []
    for nid in neighbor_ids:
        entry = table.get(nid)
        if entry is None:
            rows.append(ABSENT)
            continue
        age = now - entry.t_acquire
        if age < 0:
            raise ValueError(
                f"clock skew: entry for node {nid} acquired at {entry.t_acquire}"
                f" but now is {now}"
            )
        rows.append(OverhearInfo(confidence(age, time_scale_s), entry.queue_len, entry.est))
    return rows


def local_load_info(queue_len: int, est: float) -> OverhearInfo:
    """A node's own load row: acquisition is synchronized with the decision,
    so the confidence term is 0."""
    if queue_len < 0 or est < 0:
        raise ValueError("queue_len and est must be >= 0")
    return OverhearInfo(confidence=0.0, queue_len=queue_len, est=est)


def pack_annex(t_acquire: float, queue_len: int, est: float) -> bytes:
    """Serialize a load annex to its 10-byte wire form (lossy: float32 time,
    Q16.16 fixed-point rate, 16-bit queue length)."""
    if t_acquire < 0:
        raise ValueError("t_acquire must be >= 0")
    if not 0 <= queue_len <= 0xFFFF:
        raise ValueError("queue_len out of uint16 range")
    est_fixed = int(round(est * _EST_SCALE))
    if not 0 <= est_fixed <= 0xFFFFFFFF:
        raise ValueError("est out of Q16.16 range")
    return struct.pack(_ANNEX_FMT, t_acquire, queue_len, est_fixed)


def unpack_annex(data: bytes) -> tuple[float, int, float]:
    """Inverse of pack_annex."""
    if len(data) != ANNEX_BYTES:
        raise ValueError(f"annex must be exactly {ANNEX_BYTES} bytes")
    t_acquire, queue_len, est_fixed = struct.unpack(_ANNEX_FMT, data)
    return float(t_acquire), int(queue_len), est_fixed / _EST_SCALE
