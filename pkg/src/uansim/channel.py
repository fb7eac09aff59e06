"""Underwater acoustic channel model.

Thorp absorption, Urick spreading/absorption loss, unit-mean Rayleigh block
fading, the four-component ambient noise profile (turbulence, shipping, waves,
thermal) and the resulting SINR / decode predicates used by the simulator.

All dB/linear conversions are base 10. Frequencies are in kHz, distances in km
unless a name says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Intensity of 1 W of acoustic power radiated omnidirectionally, measured at
# 1 m, expressed in dB re uPa^2. The ambient-noise formulas below are stated
# in dB re uPa^2/Hz; subtracting this reference puts the noise PSD on the same
# watt-referenced scale as the transmit powers, which is what makes the SINR
# quotient dimensionally meaningful.
DEFAULT_SOURCE_LEVEL_REF_DB = 170.8


def to_db(x: float) -> float:
    """Linear power ratio to dB. x must be > 0."""
    if x <= 0:
        raise ValueError(f"cannot convert non-positive value {x!r} to dB")
    return 10.0 * math.log10(x)


def from_db(x_db: float) -> float:
    """dB to linear power ratio."""
    return 10.0 ** (x_db / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Static acoustic environment shared by one deployment.

    :param carrier_freq_khz: carrier frequency f_c in kHz
    :param bandwidth_hz: receiver bandwidth in Hz
    :param transducer_efficiency: electrical-to-acoustic efficiency in (0, 1]
    :param anomaly_db: site propagation anomaly A in dB (0..5 typical)
    :param shipping_factor: shipping activity s in [0, 1]
    :param wind_speed_ms: wind speed w in m/s (>= 0)
    :param source_level_ref_db: watt-to-uPa reference, see module notes
    """

    carrier_freq_khz: float = 24.0
    bandwidth_hz: float = 6000.0
    transducer_efficiency: float = 0.6
    anomaly_db: float = 0.0
    shipping_factor: float = 0.5
    wind_speed_ms: float = 0.0
    source_level_ref_db: float = DEFAULT_SOURCE_LEVEL_REF_DB

    def __post_init__(self):
        if self.carrier_freq_khz <= 0:
            raise ValueError("carrier_freq_khz must be positive")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if not 0.0 < self.transducer_efficiency <= 1.0:
            raise ValueError("transducer_efficiency must be in (0, 1]")
        if self.anomaly_db < 0:
            raise ValueError("anomaly_db must be >= 0")
        if not 0.0 <= self.shipping_factor <= 1.0:
            raise ValueError("shipping_factor must be in [0, 1]")
        if self.wind_speed_ms < 0:
            raise ValueError("wind_speed_ms must be >= 0")


@dataclass(frozen=True)
class LinkGain:
    """Channel state of one transmission: deterministic loss times fading.

    channel_gain = transmission_loss * fading_coeff^2 and is filled in
    automatically.
    """

    transmission_loss: float
    fading_coeff: float
    channel_gain: float = field(init=False)

    def __post_init__(self):
        if self.transmission_loss <= 0:
            raise ValueError("transmission_loss must be positive")
        if self.fading_coeff < 0:
            raise ValueError("fading_coeff must be >= 0")
        object.__setattr__(
            self, "channel_gain", self.transmission_loss * self.fading_coeff**2
        )


def thorp_absorption(freq_khz: float) -> float:
    """Thorp absorption coefficient.

    :param freq_khz: frequency in kHz (> 0)
    :returns: absorption in dB/km

    alpha(f) = 0.11 f^2/(1+f^2) + 44 f^2/(4100+f^2) + 2.75e-4 f^2 + 0.003
    """
    if freq_khz <= 0:
        raise ValueError("freq_khz must be positive")
    f2 = freq_khz * freq_khz
    return 0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003


def transmission_loss(
    distance_km: float,
    params: ChannelParams,
    absorption_db_per_km: float | None = None,
) -> float:
    """Deterministic propagation gain H (spherical spreading + absorption).

    H = (1000 d)^-2 * 10^(-(alpha d + A)/10), d in km.

    :param distance_km: transmitter-receiver distance in km (> 0)
    :param absorption_db_per_km: override for alpha; defaults to Thorp at f_c
    :returns: linear power gain in (0, 1)
    """
    if distance_km <= 0:
        raise ValueError("distance_km must be positive")
    alpha = (
        thorp_absorption(params.carrier_freq_khz)
        if absorption_db_per_km is None
        else absorption_db_per_km
    )
    spreading = (1000.0 * distance_km) ** -2
    return spreading * from_db(-(alpha * distance_km + params.anomaly_db))


def fading_from_uniform(u: float) -> float:
    """Inverse CDF of the unit-mean Rayleigh fading coefficient.

    F(x) = 1 - exp(-pi x^2 / 4), so x(u) = sqrt(-4 ln(1-u) / pi).
    """
    if not 0.0 <= u < 1.0:
        raise ValueError("u must be in [0, 1)")
    return math.sqrt(-4.0 * math.log1p(-u) / math.pi)


def sample_fading(rng: np.random.Generator) -> float:
    """Draw one block-fading coefficient rho (unit-mean Rayleigh)."""
    return fading_from_uniform(float(rng.random()))


def noise_components_db(params: ChannelParams) -> dict[str, float]:
    """The four ambient noise PSD components at f_c, in dB re uPa^2/Hz."""
    f = params.carrier_freq_khz
    s = params.shipping_factor
    w = params.wind_speed_ms
    logf = math.log10(f)
    return {
        "turbulence": 17.0 - 30.0 * logf,
        "shipping": 40.0 + 20.0 * (s - 0.5) + 26.0 * logf - 60.0 * math.log10(f + 0.03),
        "waves": 50.0 + 7.5 * math.sqrt(w) + 20.0 * logf - 40.0 * math.log10(f + 0.4),
        "thermal": -15.0 + 20.0 * logf,
    }


def noise_psd(params: ChannelParams) -> float:
    """Total ambient noise PSD at the carrier, on the watt-referenced scale.

    Each component is converted to linear (re-referenced from uPa^2 to watts
    through source_level_ref_db) and the four are added.

    :returns: noise power per Hz, same power scale as eta0 * p * H
    """
    ref = params.source_level_ref_db
    return sum(from_db(db - ref) for db in noise_components_db(params).values())


def sinr(
    power_w: float,
    gain: LinkGain,
    interferers: list[tuple[float, LinkGain]],
    params: ChannelParams,
) -> float:
    """Signal-to-interference-plus-noise ratio of one reception.

    gamma = eta0 p h / (eta0 sum_k p_k h_k + N(f_c) df)

    :param power_w: transmit power of the packet of interest (>= 0)
    :param gain: its LinkGain
    :param interferers: list of (power_w, LinkGain) for concurrent packets
    :returns: gamma, linear
    """
    if power_w < 0:
        raise ValueError("power_w must be >= 0")
    eta = params.transducer_efficiency
    noise = noise_psd(params) * params.bandwidth_hz
    interference = sum(p * g.channel_gain for p, g in interferers)
    if any(p < 0 for p, _ in interferers):
        raise ValueError("interferer power must be >= 0")
    return eta * power_w * gain.channel_gain / (eta * interference + noise)


def decodes(gamma: float, threshold_db: float) -> bool:
    """True when 10 log10(gamma) meets the mode threshold (inclusive)."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if gamma == 0.0:
        return False
    return 10.0 * math.log10(gamma) >= threshold_db
