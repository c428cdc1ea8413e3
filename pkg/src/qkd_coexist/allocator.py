"""Greedy classical-channel allocation around a CV-QKD channel and single-channel
coexistence envelopes (tolerable launch power vs distance)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Sequence

from scipy.optimize import bisect

from .keyrate import (
    CvqkdSystem,
    InfeasibleError,
    KeyRateResult,
    null_key_threshold,
    secret_key_rate,
)
from .noise import (
    Direction,
    MuxSpec,
    RamanProfile,
    Scenario,
    WdmChannel,
    total_noise_budget,
)
from .units import FiberLink, ItuChannel, Reference, dbm_to_mw, itu_channel, mw_to_dbm

REL_TIE = 1e-12


class Objective(str, Enum):
    MIN_NOISE = "min_noise"
    MAX_NOISE = "max_noise"


@dataclass(frozen=True)
class AllocationRequest:
    quantum: ItuChannel
    candidate_indices: tuple[int, ...]
    forward_dbm: float
    backward_dbm: float
    link: FiberLink
    system: CvqkdSystem
    mux: MuxSpec = field(default_factory=MuxSpec)
    profile: RamanProfile = field(default_factory=RamanProfile.flat)
    objective: Objective = Objective.MIN_NOISE
    fixed_pairs: int | None = None  # None: place as many as the key rate allows
    paired: bool = True  # False: forward and backward channels are placed independently
    base: Scenario | None = None  # extra scenario settings (amplifier, disabled sources, ...)

    def __post_init__(self):
        if self.quantum.index in self.candidate_indices:
            raise ValueError("the quantum channel cannot be a candidate")
        for i in self.candidate_indices:
            itu_channel(i)  # raises outside the C band
        if self.fixed_pairs is not None and self.fixed_pairs < 0:
            raise ValueError("fixed_pairs must be >= 0")

    def scenario(self, channels) -> Scenario:
        base = self.base or Scenario(self.system, self.link)
        return replace(base, system=replace(self.system, quantum_channel=self.quantum),
                       link=self.link, mux=self.mux, profile=self.profile, channels=tuple(channels))


@dataclass(frozen=True)
class AllocationResult:
    chosen: tuple[tuple[ItuChannel, Direction], ...]
    per_channel_xi: tuple[float, ...]  # marginal xi of each placed unit (pair or channel), at Alice
    cumulative_xi: tuple[float, ...]  # total budget after each placement, at Alice
    pairs_placed: int
    feasible: bool
    key_rate_final: KeyRateResult
    status: str  # "ok" | "infeasible_baseline"
    baseline_xi: float


def _units(req: AllocationRequest) -> list[tuple[WdmChannel, ...]]:
    fwd = lambda i: WdmChannel(itu_channel(i), Direction.FORWARD, req.forward_dbm)
    bwd = lambda i: WdmChannel(itu_channel(i), Direction.BACKWARD, req.backward_dbm)
    if req.paired:
        return [(fwd(i), bwd(i)) for i in req.candidate_indices]
    return [(fwd(i),) for i in req.candidate_indices] + [(bwd(i),) for i in req.candidate_indices]


def _xi(req: AllocationRequest, channels) -> float:
    return total_noise_budget(req.scenario(channels), Reference.AT_ALICE).total.value


def allocate(req: AllocationRequest) -> AllocationResult:
    """Place classical channels one unit at a time.

    Each step evaluates the marginal total-budget excess noise of every remaining
    unit and keeps the best one for the objective. Ties go to the larger spectral
    distance from the quantum channel, then the lower ITU index. Without
    ``fixed_pairs`` the loop stops before the key rate would become non-positive.
    """
    T = req.scenario(()).transmission
    system = req.system
    placed: list[WdmChannel] = []
    chosen, marginals, cumulative = [], [], []
    xi_now = _xi(req, ())
    baseline = xi_now
    key = secret_key_rate(system, T, xi_now)
    if not key.positive:
        return AllocationResult((), (), (), 0, False, key, "infeasible_baseline", baseline)
    remaining = _units(req)
    qf = req.quantum.frequency_thz
    target = req.fixed_pairs
    while remaining and (target is None or len(marginals) < target):
        scored = []
        for unit in remaining:
            xi = _xi(req, placed + list(unit))
            scored.append((xi - xi_now, xi, unit))
        sign = 1 if req.objective == Objective.MIN_NOISE else -1
        best_val = min(sign * s[0] for s in scored)
        tol = REL_TIE * max(abs(best_val), 1e-300)
        tied = [s for s in scored if abs(sign * s[0] - best_val) <= tol]
        tied.sort(key=lambda s: (-abs(s[2][0].itu.frequency_thz - qf), s[2][0].itu.index,
                                 s[2][0].direction != Direction.FORWARD))
        marginal, xi_next, unit = tied[0]
        key_next = secret_key_rate(system, T, xi_next)
        if target is None and not key_next.positive:
            break
        placed.extend(unit)
        remaining.remove(unit)
        chosen.extend((c.itu, c.direction) for c in unit)
        marginals.append(marginal)
        cumulative.append(xi_next)
        xi_now, key = xi_next, key_next
    return AllocationResult(tuple(chosen), tuple(marginals), tuple(cumulative), len(marginals),
                            key.positive, key, "ok", baseline)


def write_allocation_csv(req: AllocationRequest, res: AllocationResult, path_or_fh) -> None:
    """Grid table ``itu_index,wavelength_nm,role,marginal_xi_n0,cumulative_xi_n0``.

    ``role`` is quantum, fwd, bwd or unused; a pair occupies one row per direction.
    """
    rows = []
    per_unit = 2 if req.paired else 1
    step_of = {(ch.index, d): n // per_unit for n, (ch, d) in enumerate(res.chosen)}
    indices = sorted(set(req.candidate_indices) | {req.quantum.index})
    for i in indices:
        ch = itu_channel(i)
        if i == req.quantum.index:
            rows.append([i, f"{ch.wavelength_nm:.2f}", "quantum", "", ""])
            continue
        used = False
        for d, role in ((Direction.FORWARD, "fwd"), (Direction.BACKWARD, "bwd")):
            if (i, d) in step_of:
                k = step_of[(i, d)]
                rows.append([i, f"{ch.wavelength_nm:.2f}", role,
                             f"{res.per_channel_xi[k]:.6e}", f"{res.cumulative_xi[k]:.6e}"])
                used = True
        if not used:
            rows.append([i, f"{ch.wavelength_nm:.2f}", "unused", "", ""])
    own = isinstance(path_or_fh, (str, Path))
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["itu_index", "wavelength_nm", "role", "marginal_xi_n0", "cumulative_xi_n0"])
        w.writerows(rows)
    finally:
        if own:
            fh.close()


# -- single channel envelope ----------------------------------------------------------

CLASSICAL_INDEX = 34


def _single_scenario(distance_km: float, direction: Direction, power_mw: float, system: CvqkdSystem,
                     link: FiberLink, mux: MuxSpec, profile: RamanProfile,
                     classical_index: int = CLASSICAL_INDEX) -> Scenario:
    dbm = -math.inf if power_mw == 0 else mw_to_dbm(power_mw)
    ch = WdmChannel(itu_channel(classical_index), direction, dbm)
    return Scenario(system, link.with_length(distance_km), (ch,), mux, profile)


def max_tolerable_power(distance_km: float, direction: Direction, system: CvqkdSystem,
                        link: FiberLink | None = None, mux: MuxSpec | None = None,
                        profile: RamanProfile | None = None, tol_mw: float = 1e-3,
                        classical_index: int = CLASSICAL_INDEX) -> float:
    """Launch power (mW) of one classical channel at which the full budget reaches the null-key threshold."""
    link = link or FiberLink(distance_km)
    mux = mux or MuxSpec()
    profile = profile or RamanProfile.flat()

    def budget(p_mw: float) -> float:
        sc = _single_scenario(distance_km, direction, p_mw, system, link, mux, profile, classical_index)
        return total_noise_budget(sc).total.value

    T = _single_scenario(distance_km, direction, 0.0, system, link, mux, profile, classical_index).transmission
    thr = null_key_threshold(system, T).value
    margin = lambda p: thr - budget(p)
    if margin(0.0) <= 0:
        raise InfeasibleError(f"no positive key at {distance_km} km even without classical power")
    hi = 1.0
    while margin(hi) > 0:
        hi *= 2
        if hi > 1e6:
            raise InfeasibleError("tolerable power bracket did not close")
    return float(bisect(margin, 0.0, hi, xtol=tol_mw / 100))


class Reach(NamedTuple):
    distance_km: float
    feasible: bool


def _key_at(distance_km: float, direction: Direction, power_mw: float, system, link, mux, profile,
            classical_index: int) -> float:
    sc = _single_scenario(distance_km, direction, power_mw, system, link, mux, profile, classical_index)
    xi = total_noise_budget(sc).total.value
    return secret_key_rate(system, sc.transmission, xi).key_bits_per_pulse


def reachable_distance(power_dbm: float, direction: Direction, system: CvqkdSystem,
                       link: FiberLink | None = None, mux: MuxSpec | None = None,
                       profile: RamanProfile | None = None, max_km: float = 500.0,
                       tol_km: float = 1e-4, classical_index: int = CLASSICAL_INDEX) -> Reach:
    """Distance at which the key rate of the single-channel scenario crosses zero."""
    if math.isnan(power_dbm) or power_dbm == math.inf:
        raise ValueError("power must be finite or -inf")
    link = link or FiberLink(0.0)
    mux = mux or MuxSpec()
    profile = profile or RamanProfile.flat()
    p_mw = 0.0 if power_dbm == -math.inf else dbm_to_mw(power_dbm)
    lo = 1e-6
    f = lambda L: _key_at(L, direction, p_mw, system, link, mux, profile, classical_index)
    if f(lo) <= 0:
        return Reach(0.0, False)
    if f(max_km) > 0:
        return Reach(max_km, True)
    return Reach(float(bisect(f, lo, max_km, xtol=tol_km)), True)


def dark_fiber_distance(system: CvqkdSystem, mux: MuxSpec | None = None, max_km: float = 500.0) -> float:
    """Reach with no classical power at all."""
    return reachable_distance(-math.inf, Direction.FORWARD, system, mux=mux, max_km=max_km).distance_km


def default_candidates(quantum: ItuChannel, anti_stokes_only: bool = True) -> tuple[int, ...]:
    """Grid indices usable for classical channels (longer wavelengths than the quantum channel by default)."""
    from .units import c_band_indices

    idx = [i for i in c_band_indices() if i != quantum.index]
    if anti_stokes_only:
        idx = [i for i in idx if i < quantum.index]
    return tuple(idx)
