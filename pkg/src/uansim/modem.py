"""OFDM acoustic modem: mode table, framing arithmetic, transmit energy.

The default mode table is the five-rate profile of a 24 kHz OFDM acoustic
modem (1024 subcarriers, 672 data). A packet of L_d bytes is segmented into
ceil(L_d / L_b) blocks; on-air time is preamble + blocks + inter-block guards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class TransmissionMode:
    """One row of the modem rate table."""

    index: int
    code_rate: Fraction
    modulation: str
    payload_per_block_bytes: int
    rate_kbps: float
    threshold_db: float

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("mode index starts at 1")
        if self.payload_per_block_bytes <= 0:
            raise ValueError("payload_per_block_bytes must be positive")
        if self.rate_kbps <= 0:
            raise ValueError("rate_kbps must be positive")
        if not 0 < self.code_rate <= 1:
            raise ValueError("code_rate must be in (0, 1]")


DEFAULT_MODES: tuple[TransmissionMode, ...] = (
    TransmissionMode(1, Fraction(1, 2), "BPSK", 38, 1.38, 3.8),
    TransmissionMode(2, Fraction(1, 2), "QPSK", 80, 2.90, 5.0),
    TransmissionMode(3, Fraction(3, 4), "QPSK", 122, 4.42, 7.4),
    TransmissionMode(4, Fraction(1, 2), "16QAM", 164, 5.94, 9.2),
    TransmissionMode(5, Fraction(3, 4), "16QAM", 248, 8.99, 12.2),
)


@dataclass(frozen=True)
class FramingParams:
    """On-air timing constants, in seconds."""

    preamble_s: float = 0.5
    block_s: float = 0.1707
    guard_s: float = 0.05

    def __post_init__(self):
        if self.preamble_s <= 0 or self.block_s <= 0 or self.guard_s < 0:
            raise ValueError("framing durations must be positive (guard >= 0)")


def block_count(payload_bytes: int, mode: TransmissionMode) -> int:
    """Number of modem blocks for a payload: ceil(L_d / L_b)."""
    if payload_bytes <= 0:
        raise ValueError("payload_bytes must be positive")
    return math.ceil(payload_bytes / mode.payload_per_block_bytes)


def tx_duration(
    payload_bytes: int,
    mode: TransmissionMode,
    framing: FramingParams = FramingParams(),
    timing: str = "blocks",
) -> float:
    """On-air duration of one packet, in seconds.

    timing="blocks" (default): preamble + n blocks + (n-1) guards.
    timing="nominal_rate": payload bits divided by the mode's nominal rate,
    an idealized variant kept behind this switch.
    """
    if timing == "blocks":
        n = block_count(payload_bytes, mode)
        return framing.preamble_s + n * framing.block_s + (n - 1) * framing.guard_s
    if timing == "nominal_rate":
        if payload_bytes <= 0:
            raise ValueError("payload_bytes must be positive")
        return payload_bytes * 8.0 / (mode.rate_kbps * 1000.0)
    raise ValueError(f"unknown timing model {timing!r}")


def tx_energy(
    power_w: float,
    payload_bytes: int,
    mode: TransmissionMode,
    framing: FramingParams = FramingParams(),
    power_range: tuple[float, float] = (0.0, 40.0),
    timing: str = "blocks",
) -> float:
    """Transmit energy of one packet: e = p * delta_tx, in joules.

    power_w outside [p_min, p_max] is a domain error.
    """
    p_min, p_max = power_range
    if not p_min <= power_w <= p_max:
        raise ValueError(
            f"power {power_w} W outside modem range [{p_min}, {p_max}] W"
        )
    return power_w * tx_duration(payload_bytes, mode, framing, timing)


@dataclass(frozen=True)
class Modem:
    """A mode table plus framing and the hardware power range."""

    modes: tuple[TransmissionMode, ...] = DEFAULT_MODES
    framing: FramingParams = FramingParams()
    p_min: float = 0.0
    p_max: float = 40.0
    timing: str = "blocks"

    def __post_init__(self):
        if not self.modes:
            raise ValueError("modem needs at least one mode")
        if [m.index for m in self.modes] != list(range(1, len(self.modes) + 1)):
            raise ValueError("mode indices must be 1..n in order")
        if not 0 <= self.p_min < self.p_max:
            raise ValueError("need 0 <= p_min < p_max")
        if self.timing not in ("blocks", "nominal_rate"):
            raise ValueError(f"unknown timing model {self.timing!r}")

    def mode(self, index: int) -> TransmissionMode:
        try:
            m = self.modes[index - 1]
        except IndexError:
            raise ValueError(f"no mode with index {index}") from None
        return m

    def tx_duration(self, payload_bytes: int, mode_index: int) -> float:
        return tx_duration(
            payload_bytes, self.mode(mode_index), self.framing, self.timing
        )

    def tx_energy(self, power_w: float, payload_bytes: int, mode_index: int) -> float:
        return tx_energy(
            power_w,
            payload_bytes,
            self.mode(mode_index),
            self.framing,
            (self.p_min, self.p_max),
            self.timing,
        )


def modes_to_dicts(modes: tuple[TransmissionMode, ...]) -> list[dict]:
    """Mode table as plain dicts for the config file."""
    return [
        {
            "index": m.index,
            "code_rate": str(m.code_rate),
            "modulation": m.modulation,
            "payload_per_block_bytes": m.payload_per_block_bytes,
            "rate_kbps": m.rate_kbps,
            "threshold_db": m.threshold_db,
        }
        for m in modes
    ]


def modes_from_dicts(rows: list[dict]) -> tuple[TransmissionMode, ...]:
    """Inverse of modes_to_dicts. code_rate accepts "3/4" or a number."""
    out = []
    for row in rows:
        rate = row["code_rate"]
        code = Fraction(rate) if isinstance(rate, str) else Fraction(rate).limit_denominator(64)
        out.append(
            TransmissionMode(
                index=int(row["index"]),
                code_rate=code,
                modulation=str(row["modulation"]),
                payload_per_block_bytes=int(row["payload_per_block_bytes"]),
                rate_kbps=float(row["rate_kbps"]),
                threshold_db=float(row["threshold_db"]),
            )
        )
    return tuple(out)
