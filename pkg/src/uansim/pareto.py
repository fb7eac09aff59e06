"""Transmission-parameter design by multi-objective search.

The decision space is <mode, power>; the objectives are on-air delay and
transmit energy at a fixed design distance and payload, subject to the decode
threshold at that distance (rho = 1, no interference). A hand-rolled NSGA-II
(fast non-dominated sort, crowding distance, constrained domination) reduces
it to a Pareto front, from which a small ordered action set is drawn for the
schedulers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams, LinkGain, decodes, sinr, transmission_loss
from .modem import Modem


class FrontError(Exception):
    """No feasible front, or an action-space request the front cannot fill."""


@dataclass(frozen=True)
class ParetoSolution:
    """One feasible design point with objectives (delay_s, energy_j)."""

    mode_index: int
    power_w: float
    delay_s: float
    energy_j: float

    @property
    def objectives(self) -> tuple[float, float]:
        return (self.delay_s, self.energy_j)


# The wait action: entry 0 of every action space.
WAIT = None


@dataclass(frozen=True)
class GAParams:
    population: int = 500
    generations: int = 500
    crossover_prob: float = 0.9
    mode_mutation_prob: float = 0.1
    power_sigma_w: float = 2.0
    power_grid_w: float | None = None
    dedup_tol: float = 1e-9

    def __post_init__(self):
        if self.population < 4 or self.population % 2:
            raise ValueError("population must be an even number >= 4")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 0 <= self.crossover_prob <= 1 or not 0 <= self.mode_mutation_prob <= 1:
            raise ValueError("probabilities must be in [0, 1]")
        if self.power_sigma_w <= 0:
            raise ValueError("power_sigma_w must be positive")
        if self.power_grid_w is not None and self.power_grid_w <= 0:
            raise ValueError("power_grid_w must be positive")


class DesignProblem:
    """Objective/constraint evaluation for <mode, power> at the design point."""

    def __init__(
        self,
        modem: Modem,
        channel: ChannelParams,
        design_distance_km: float,
        payload_bytes: int,
    ):
        if design_distance_km <= 0:
            raise ValueError("design_distance_km must be positive")
        if payload_bytes <= 0:
            raise ValueError("payload_bytes must be positive")
        self.modem = modem
        self.channel = channel
        self.design_distance_km = design_distance_km
        self.payload_bytes = payload_bytes
        self._gain = LinkGain(
            transmission_loss(design_distance_km, channel), fading_coeff=1.0
        )
        self._delays = np.array(
            [modem.tx_duration(payload_bytes, m.index) for m in modem.modes]
        )
        self._thresholds = np.array([m.threshold_db for m in modem.modes])
        # gamma is linear in p with zero interference; precompute gamma(1 W)
        self._gamma_per_watt = sinr(1.0, self._gain, [], channel)

    @property
    def n_modes(self) -> int:
        return len(self.modem.modes)

    def evaluate(self, modes: np.ndarray, powers: np.ndarray):
        """Vectorized objectives and constraint slack.

        :param modes: int array of mode indices (1-based)
        :param powers: float array of transmit powers, W
        :returns: (delay, energy, shortfall_db) arrays; shortfall <= 0 means
            the decode constraint is met
        """
        delay = self._delays[modes - 1]
        energy = powers * delay
        gamma = self._gamma_per_watt * powers
        with np.errstate(divide="ignore"):
            gamma_db = np.where(gamma > 0, 10.0 * np.log10(np.maximum(gamma, 1e-300)), -np.inf)
        shortfall = self._thresholds[modes - 1] - gamma_db
        return delay, energy, shortfall

    def solution(self, mode_index: int, power_w: float) -> ParetoSolution:
        delay = self.modem.tx_duration(self.payload_bytes, mode_index)
        return ParetoSolution(mode_index, power_w, delay, power_w * delay)

    def is_feasible(self, mode_index: int, power_w: float) -> bool:
        gamma = self._gamma_per_watt * power_w
        return (
            self.modem.p_min <= power_w <= self.modem.p_max
            and decodes(gamma, self.modem.mode(mode_index).threshold_db)
        )


def dominates(a: ParetoSolution, b: ParetoSolution) -> bool:
    """Standard Pareto dominance on (delay, energy), both minimized."""
    ao, bo = a.objectives, b.objectives
    return all(x <= y for x, y in zip(ao, bo)) and any(x < y for x, y in zip(ao, bo))


def _domination_matrix(obj: np.ndarray) -> np.ndarray:
    """D[i, j] true iff solution i dominates solution j (objective space)."""
    le = (obj[:, None, :] <= obj[None, :, :]).all(axis=2)
    lt = (obj[:, None, :] < obj[None, :, :]).any(axis=2)
    return le & lt


def non_dominated_sort(solutions: list[ParetoSolution]) -> list[list[ParetoSolution]]:
    """Fast non-dominated sort into fronts F1, F2, ... (Deb et al.)."""
    if not solutions:
        return []
    obj = np.array([s.objectives for s in solutions])
    ranks = _sort_ranks(_domination_matrix(obj))
    fronts: list[list[ParetoSolution]] = [[] for _ in range(ranks.max() + 1)]
    for s, r in zip(solutions, ranks):
        fronts[r].append(s)
    return fronts


def _sort_ranks(dom: np.ndarray) -> np.ndarray:
    """Front index per solution from a domination matrix."""
    n = dom.shape[0]
    counts = dom.sum(axis=0)
    ranks = np.full(n, -1, dtype=int)
    rank = 0
    remaining = counts.copy()
    alive = np.ones(n, dtype=bool)
    while alive.any():
        front = alive & (remaining == 0)
        if not front.any():
            raise RuntimeError("cyclic domination; objectives are inconsistent")
        ranks[front] = rank
        for i in np.flatnonzero(front):
            remaining -= dom[i]
        alive &= ~front
        rank += 1
    return ranks


def crowding_distance(front: list[ParetoSolution]) -> list[float]:
    """Crowding distance per member; boundaries are infinite."""
    return list(_crowding(np.array([s.objectives for s in front])))


def _crowding(obj: np.ndarray) -> np.ndarray:
    n = obj.shape[0]
    if n == 0:
        return np.array([])
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for k in range(obj.shape[1]):
        order = np.argsort(obj[:, k], kind="stable")
        vals = obj[order, k]
        span = vals[-1] - vals[0]
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        if span > 0:
            interior = order[1:-1]
            dist[interior] += (vals[2:] - vals[:-2]) / span
    return dist


@dataclass
class FrontResult:
    """Final deduplicated first front, sorted by ascending delay."""

    solutions: list[ParetoSolution]
    hypervolume_trace: list[float] = field(default_factory=list)


def _snap(powers: np.ndarray, grid: float | None, p_min: float, p_max: float) -> np.ndarray:
    powers = np.clip(powers, p_min, p_max)
    if grid is not None:
        powers = np.round((powers - p_min) / grid) * grid + p_min
        powers = np.clip(powers, p_min, p_max)
    return powers


def _hypervolume_2d(obj: np.ndarray, ref: tuple[float, float]) -> float:
    """Exact 2D hypervolume of a minimization front w.r.t. a reference point."""
    if obj.size == 0:
        return 0.0
    pts = obj[(obj[:, 0] <= ref[0]) & (obj[:, 1] <= ref[1])]
    if pts.size == 0:
        return 0.0
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    hv = 0.0
    best_e = ref[1]
    for d, e in pts:
        if e < best_e:
            hv += (ref[0] - d) * (best_e - e)
            best_e = e
    return hv


def evolve(
    problem: DesignProblem,
    ga: GAParams,
    rng: np.random.Generator,
) -> FrontResult:
    """NSGA-II over <mode, power>.

    Constrained domination: any feasible solution dominates any infeasible
    one; among infeasible ones the smaller threshold shortfall wins. Raises
    FrontError when no feasible solution is found.
    """
    n = ga.population
    n_modes = problem.n_modes
    p_min, p_max = problem.modem.p_min, problem.modem.p_max

    modes = rng.integers(1, n_modes + 1, size=n)
    powers = _snap(
        p_min + rng.random(n) * (p_max - p_min), ga.power_grid_w, p_min, p_max
    )

    ref = (float(problem._delays.max()), float(p_max * problem._delays.max()))
    hv_trace: list[float] = []

    def constrained_ranks(obj, shortfall):
        feasible = shortfall <= 0
        viol = np.where(feasible, 0.0, shortfall)
        dom = _domination_matrix(obj)
        feas_i = feasible[:, None]
        feas_j = feasible[None, :]
        both_infeas = ~feas_i & ~feas_j
        viol_lt = viol[:, None] < viol[None, :]
        cdom = (feas_i & ~feas_j) | (both_infeas & viol_lt) | (feas_i & feas_j & dom)
        return _sort_ranks(cdom), feasible

    for _ in range(ga.generations):
        delay, energy, shortfall = problem.evaluate(modes, powers)
        obj = np.stack([delay, energy], axis=1)
        ranks, feasible = constrained_ranks(obj, shortfall)

        if feasible.any():
            mask = feasible & (ranks == ranks[feasible].min())
            hv_trace.append(_hypervolume_2d(obj[mask], ref))
        else:
            hv_trace.append(0.0)

        crowd = np.empty(n)
        for r in np.unique(ranks):
            idx = np.flatnonzero(ranks == r)
            crowd[idx] = _crowding(obj[idx])

        # binary tournament on (rank asc, crowding desc)
        cand = rng.integers(0, n, size=(2, n))
        a, b = cand[0], cand[1]
        better_a = (ranks[a] < ranks[b]) | ((ranks[a] == ranks[b]) & (crowd[a] > crowd[b]))
        parents = np.where(better_a, a, b)

        # variation: pairwise single-point crossover on <mode | power> with
        # power blending, then mutation
        pa, pb = parents[0::2], parents[1::2]
        cross = rng.random(pa.size) < ga.crossover_prob
        u1 = rng.random(pa.size)
        u2 = rng.random(pa.size)
        child_modes = np.empty(n, dtype=int)
        child_powers = np.empty(n)
        blend1 = u1 * powers[pa] + (1 - u1) * powers[pb]
        blend2 = u2 * powers[pa] + (1 - u2) * powers[pb]
        child_modes[0::2] = modes[pa]
        child_modes[1::2] = modes[pb]
        child_powers[0::2] = np.where(cross, blend1, powers[pa])
        child_powers[1::2] = np.where(cross, blend2, powers[pb])

        remode = rng.random(n) < ga.mode_mutation_prob
        child_modes[remode] = rng.integers(1, n_modes + 1, size=int(remode.sum()))
        child_powers = child_powers + rng.normal(0.0, ga.power_sigma_w, size=n)
        child_powers = _snap(child_powers, ga.power_grid_w, p_min, p_max)

        # elitist environmental selection on parents + offspring
        all_modes = np.concatenate([modes, child_modes])
        all_powers = np.concatenate([powers, child_powers])
        d2, e2, s2 = problem.evaluate(all_modes, all_powers)
        obj2 = np.stack([d2, e2], axis=1)
        ranks2, _ = constrained_ranks(obj2, s2)
        crowd2 = np.empty(2 * n)
        for r in np.unique(ranks2):
            idx = np.flatnonzero(ranks2 == r)
            crowd2[idx] = _crowding(obj2[idx])
        neg_crowd = np.where(np.isinf(crowd2), -np.inf, -crowd2)
        order = np.lexsort((neg_crowd, ranks2))
        keep = order[:n]
        modes, powers = all_modes[keep], all_powers[keep]

    delay, energy, shortfall = problem.evaluate(modes, powers)
    feasible = shortfall <= 0
    if not feasible.any():
        raise FrontError(
            "no feasible <mode, power> at design distance "
            f"{problem.design_distance_km} km; every mode's decode threshold "
            f"exceeds what p_max={problem.modem.p_max} W can deliver"
        )
    obj = np.stack([delay, energy], axis=1)
    fidx = np.flatnonzero(feasible)
    franks = _sort_ranks(_domination_matrix(obj[fidx]))
    first = fidx[franks == 0]

    # deduplicate by objective vector
    picked: list[int] = []
    for i in sorted(first, key=lambda i: (delay[i], energy[i])):
        if any(
            abs(delay[i] - delay[j]) < ga.dedup_tol
            and abs(energy[i] - energy[j]) < ga.dedup_tol
            for j in picked
        ):
            continue
        picked.append(i)

    sols = [
        ParetoSolution(int(modes[i]), float(powers[i]), float(delay[i]), float(energy[i]))
        for i in picked
    ]
    sols.sort(key=lambda s: s.delay_s)
    hv_trace.append(_hypervolume_2d(np.array([s.objectives for s in sols]), ref))
    return FrontResult(solutions=sols, hypervolume_trace=hv_trace)


def brute_force_front(problem: DesignProblem, power_step_w: float) -> list[ParetoSolution]:
    """Exhaustive Pareto front over the mode x power grid (test oracle and
    small-problem fallback)."""
    p_min, p_max = problem.modem.p_min, problem.modem.p_max
    n_steps = int(round((p_max - p_min) / power_step_w))
    powers = p_min + power_step_w * np.arange(n_steps + 1)
    combos = []
    for m in range(1, problem.n_modes + 1):
        for p in powers:
            if problem.is_feasible(m, float(p)):
                combos.append(problem.solution(m, float(p)))
    if not combos:
        raise FrontError("no feasible grid point at the design distance")
    fronts = non_dominated_sort(combos)
    best = {}
    for s in fronts[0]:
        best.setdefault(s.objectives, s)
    return sorted(best.values(), key=lambda s: s.delay_s)


def build_action_space(front: list[ParetoSolution], u_target: int) -> list:
    """Ordered action list: wait plus u_target front members.

    Extremes (minimum delay, minimum energy) are always kept; the interior is
    chosen by maximal crowding distance. Actions are ordered by ascending
    delay after the leading wait entry.
    """
    if u_target < 1:
        raise ValueError("u_target must be >= 1")
    if len(front) < u_target:
        raise FrontError(
            f"front has {len(front)} members but u_target={u_target}; "
            f"re-run with u_target <= {len(front)}"
        )
    ordered = sorted(front, key=lambda s: (s.delay_s, s.energy_j))
    if u_target == len(ordered):
        chosen = list(ordered)
    elif u_target == 1:
        chosen = [ordered[0]]
    else:
        chosen = [ordered[0], ordered[-1]]
        interior = ordered[1:-1]
        dist = crowding_distance(ordered)
        scored = sorted(
            range(1, len(ordered) - 1),
            key=lambda i: (-dist[i], i),
        )
        chosen += [ordered[i] for i in scored[: u_target - 2]]
        chosen.sort(key=lambda s: s.delay_s)
    return [WAIT] + chosen


def save_front(path, front: list[ParetoSolution]) -> None:
    """Write a front as a plain text table: mode power delay energy."""
    with open(path, "w") as fh:
        fh.write("# mode power_w delay_s energy_j\n")
        for s in front:
            fh.write(f"{s.mode_index} {s.power_w:.9g} {s.delay_s:.9g} {s.energy_j:.9g}\n")


def load_front(path) -> list[ParetoSolution]:
    """Inverse of save_front."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"malformed front row: {line!r}")
            out.append(
                ParetoSolution(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]))
            )
    if not out:
        raise FrontError(f"front file {path} holds no solutions")
    return sorted(out, key=lambda s: s.delay_s)
