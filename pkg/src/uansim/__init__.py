"""Discrete-event simulator and resource manager for single-hop underwater
acoustic sensor networks.

The pieces, bottom to top: an acoustic channel (absorption, spreading,
Rayleigh fading, ambient noise, SINR), a multi-mode OFDM modem, per-node
traffic and mobility state, a slot-gated event engine with sink-side
conflict resolution, multi-objective reduction of the (delay, energy)
design space, confidence-weighted neighbor-load exchange, a recurrent
Q-network trained with additive team-value mixing, baseline MAC policies,
and a seeded experiment harness with a CLI.
"""

__version__ = "0.1.0"

from .channel import (
    ChannelParams,
    LinkGain,
    decodes,
    noise_psd,
    sample_fading,
    sinr,
    thorp_absorption,
    transmission_loss,
)
from .engine import (
    EpisodeResult,
    EventOutcome,
    MetricsReport,
    PolicyDecision,
    Scenario,
    Simulation,
    TransmissionEvent,
    compute_metrics,
    detect_conflicts,
    run_episode,
)
from .modem import DEFAULT_MODES, FramingParams, Modem, TransmissionMode
from .pareto import (
    DesignProblem,
    FrontResult,
    GAParams,
    ParetoSolution,
    brute_force_front,
    build_action_space,
    evolve,
)

__all__ = [
    "__version__",
    "ChannelParams",
    "LinkGain",
    "decodes",
    "noise_psd",
    "sample_fading",
    "sinr",
    "thorp_absorption",
    "transmission_loss",
    "EpisodeResult",
    "EventOutcome",
    "MetricsReport",
    "PolicyDecision",
    "Scenario",
    "Simulation",
    "TransmissionEvent",
    "compute_metrics",
    "detect_conflicts",
    "run_episode",
    "DEFAULT_MODES",
    "FramingParams",
    "Modem",
    "TransmissionMode",
    "DesignProblem",
    "FrontResult",
    "GAParams",
    "ParetoSolution",
    "brute_force_front",
    "build_action_space",
    "evolve",
]
