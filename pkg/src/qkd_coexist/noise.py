"""Excess noise induced on the quantum channel by co-propagating DWDM traffic.

Every process is first expressed at Bob's input with the eta_B = 1 convention
(``xi_out = 2 <n>`` for matched photons) and converted to Alice with the channel
transmission. Phase noise from XPM is naturally input-referred.

Models for leakage, FWM, ASE, sidebands and XPM carry explicit calibration
constants pinned to single-point reference values (25 km, 0 dBm, 100 GHz grid,
-40/-80 dB MUX isolation, 1e8 LO photons, eta_B = eta_D = 1). The constants and
their anchors are listed in ``CALIBRATION`` and echoed in the CLI output metadata.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .keyrate import CvqkdSystem
from .units import (
    C_M_S,
    H_PLANCK,
    FiberLink,
    ItuChannel,
    Reference,
    ShotNoise,
    db_to_linear,
    dbm_to_mw,
    effective_length,
    fiber_transmission,
)

# -- calibration constants -------------------------------------------------------

# unmatched photons: 1/2 polarization x 1/2 spatio-temporal overlap with the LO mode
LEAKAGE_KAPPA = 0.25
# FWM product power for two 0 dBm pumps 100 GHz apart over 25 km
FWM_ANCHOR_DBM = -81.0
FWM_ANCHOR_LENGTH_KM = 25.0
FWM_ANCHOR_SPACING_GHZ = 100.0
# matched ASE fraction behind the MUX so that G=100, n_sp=1.5 gives 6e-7 N0
ASE_ANCHOR_XI = 6e-7
ASE_FILTER_KAPPA = ASE_ANCHOR_XI / (2 * 1.5 * 99)
# scale on Var(phi); 1/(4 pi)^2 reproduces the 1.3e-5 N0 reference at 25 km
XPM_VAR_SCALE = 1.0 / (4 * math.pi) ** 2

CALIBRATION = {
    "leakage_kappa": (LEAKAGE_KAPPA, "0 dBm, -80 dB isolation, 25 km -> ~6e-9 N0 (-40 dB -> ~6e-5 N0)"),
    "fwm_anchor_dbm": (FWM_ANCHOR_DBM, "two 0 dBm pumps at 100 GHz spacing, 25 km -> -81 dBm, ~6e-4 N0"),
    "ase_filter_kappa": (ASE_FILTER_KAPPA, "EDFA gain 100, n_sp 1.5 -> ~6e-7 N0"),
    "xpm_var_scale": (XPM_VAR_SCALE, "0 dBm OOK at the QKD clock, 25 km, worst-case overlap -> ~1.3e-5 N0"),
    "sideband": (1.0, "0 dBm adjacent channel, -40 dB sideband, -40 dB MUX, 25 km -> ~2.4e-4 N0 (no fitted constant)"),
}

ZERO_RATIONALE = {
    "Rayleigh": "elastic backscatter stays at the classical wavelength; DEMUX isolation suppresses it below leakage",
    "SBS": "Brillouin shift ~8.8 pm keeps scattered light inside the classical channel",
    "GAWBS": "~600 MHz wide spectrum is outside the ~1 MHz homodyne band; 200 ns LO/signal separation",
}

SOURCES = ("SASRS_fwd", "SASRS_bwd", "Leakage", "FWM", "ASE", "Sideband", "XPM",
           "Rayleigh", "SBS", "GAWBS", "System")


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class Modulation(str, Enum):
    CONTINUOUS = "continuous"
    OOK = "ook"


class Overlap(str, Enum):
    WORST_CASE = "worst_case"
    UNIFORM = "uniform"
    NONE = "none"


@dataclass(frozen=True)
class WdmChannel:
    itu: ItuChannel
    direction: Direction = Direction.FORWARD
    launch_power_dbm: float = 0.0
    modulation: Modulation = Modulation.CONTINUOUS
    ook_rate_hz: float | None = None

    @property
    def power_mw(self) -> float:
        if self.launch_power_dbm == -math.inf:
            return 0.0
        return dbm_to_mw(self.launch_power_dbm)

    def with_power(self, dbm: float) -> "WdmChannel":
        return replace(self, launch_power_dbm=dbm)


@dataclass(frozen=True)
class MuxSpec:
    """MUX/DEMUX and add/drop module characteristics.

    The quantum signal crosses one MUX, one DEMUX (``insertion_loss_db`` each) and
    ``adm_count`` add/drop modules. All of it is counted as channel loss.
    """

    adjacent_isolation_db: float = -40.0
    nonadjacent_isolation_db: float = -80.0
    insertion_loss_db: float = 0.0
    adm_insertion_loss_db: float = 0.5
    adm_count: int = 2
    channel_spacing_ghz: float = 100.0

    def __post_init__(self):
        if self.adjacent_isolation_db >= 0 or self.nonadjacent_isolation_db >= 0:
            raise ValueError("isolations must be negative dB values")
        if self.insertion_loss_db < 0 or self.adm_insertion_loss_db < 0 or self.adm_count < 0:
            raise ValueError("insertion losses and ADM count must be >= 0")

    @property
    def eta_D(self) -> float:
        """Transmittance of the drop element in front of Bob."""
        loss = self.insertion_loss_db + (self.adm_insertion_loss_db if self.adm_count else 0.0)
        return db_to_linear(-loss)

    @property
    def component_loss_db(self) -> float:
        return 2 * self.insertion_loss_db + self.adm_count * self.adm_insertion_loss_db

    def isolation_db(self, a: ItuChannel, b: ItuChannel) -> float:
        return self.adjacent_isolation_db if abs(a.index - b.index) == 1 else self.nonadjacent_isolation_db

    @property
    def bandwidth_hz(self) -> float:
        return self.channel_spacing_ghz * 1e9


def channel_transmission(link: FiberLink, mux: MuxSpec) -> float:
    """Quantum-channel transmission T including MUX/DEMUX and ADM losses."""
    return fiber_transmission(link) * db_to_linear(-mux.component_loss_db)


# -- Raman profile ----------------------------------------------------------------

@dataclass(frozen=True)
class RamanProfile:
    """Anti-Stokes Raman coefficient beta (per km per nm) vs pump wavelength.

    Linear interpolation over pump wavelength, held constant beyond the table.
    When several quantum wavelengths are tabulated the closest one is used.
    """

    entries: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("Raman profile needs at least one entry")
        for pump, q, beta in self.entries:
            if not 0 <= beta <= 1e-6:
                raise ValueError(f"beta {beta} outside [0, 1e-6] /km/nm (pump {pump} nm)")

    @classmethod
    def flat(cls, beta: float = 3e-9, quantum_nm: float = 1531.12) -> "RamanProfile":
        return cls(((1528.0, quantum_nm, beta), (1568.0, quantum_nm, beta)))

    def beta(self, pump_nm: float, quantum_nm: float) -> float:
        arr = np.array(self.entries, dtype=float)
        qs = np.unique(arr[:, 1])
        q = qs[np.argmin(np.abs(qs - quantum_nm))]
        sel = arr[arr[:, 1] == q]
        sel = sel[np.argsort(sel[:, 0])]
        return float(np.interp(pump_nm, sel[:, 0], sel[:, 2]))

    @classmethod
    def from_csv(cls, path: str | Path) -> "RamanProfile":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            expected = ["pump_nm", "quantum_nm", "beta_per_km_nm"]
            if reader.fieldnames != expected:
                raise ValueError(f"{path}: header must be {','.join(expected)}, got {reader.fieldnames}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append((float(row["pump_nm"]), float(row["quantum_nm"]),
                                 float(row["beta_per_km_nm"])))
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
        return cls(tuple(rows))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pump_nm", "quantum_nm", "beta_per_km_nm"])
            for row in self.entries:
                w.writerow([f"{row[0]:.2f}", f"{row[1]:.2f}", f"{row[2]:.6e}"])


def bundled_profile() -> RamanProfile:
    return RamanProfile.from_csv(Path(__file__).with_name("data") / "raman_flat.csv")


# -- Raman -------------------------------------------------------------------------

def raman_geometry_km(direction: Direction, link: FiberLink) -> float:
    """Distance factor of the Raman photon count, in km."""
    a, L = link.alpha_lin_per_km, link.length_km
    if direction == Direction.FORWARD:
        return L * math.exp(-a * L)
    return -math.expm1(-2 * a * L) / (2 * a)


def raman_matched_photons(channel: WdmChannel, link: FiberLink, profile: RamanProfile,
                          eta_D: float, quantum_wavelength_nm: float) -> float:
    """Mean anti-Stokes Raman photons per LO mode reaching Bob."""
    if not 0 < eta_D <= 1:
        raise ValueError(f"eta_D must be in (0, 1], got {eta_D}")
    if link.length_km <= 0:
        raise ValueError("Raman noise needs a fiber of positive length")
    lam = quantum_wavelength_nm * 1e-9
    beta_m2 = profile.beta(channel.itu.wavelength_nm, quantum_wavelength_nm) * 1e6  # /km/nm -> /m^2
    p_w = channel.power_mw * 1e-3
    geo_m = raman_geometry_km(channel.direction, link) * 1e3
    # factor 1/2: LO selects one polarization
    return 0.5 * lam ** 3 / (H_PLANCK * C_M_S ** 2) * beta_m2 * eta_D * p_w * geo_m


def matched_noise_to_excess(n_matched: float, eta_B: float = 1.0) -> ShotNoise:
    """Excess noise at Bob from chaotic matched photons: 2 eta_B <n>."""
    if n_matched < 0:
        raise ValueError("photon number must be >= 0")
    if not 0 < eta_B <= 1:
        raise ValueError(f"eta_B must be in (0, 1], got {eta_B}")
    return ShotNoise(2 * eta_B * n_matched, Reference.AT_BOB)


def excess_to_input_referred(xi_out: ShotNoise | float, eta_D: float, T: float) -> ShotNoise:
    """Refer output excess noise back to Alice: xi_in = xi_out / (eta_D T)."""
    if T <= 0 or eta_D <= 0:
        raise ValueError("transmission and eta_D must be > 0")
    if T > 1 or eta_D > 1:
        raise ValueError("transmission and eta_D must be <= 1")
    value = xi_out.value if isinstance(xi_out, ShotNoise) else float(xi_out)
    if isinstance(xi_out, ShotNoise) and xi_out.reference != Reference.AT_BOB:
        raise ValueError("expected output-referred excess noise")
    return ShotNoise(value / (eta_D * T), Reference.AT_ALICE)


def input_to_output_referred(xi_in: ShotNoise, eta_D: float, T: float) -> ShotNoise:
    if xi_in.reference != Reference.AT_ALICE:
        raise ValueError("expected input-referred excess noise")
    return ShotNoise(xi_in.value * eta_D * T, Reference.AT_BOB)


def _band_photons(power_w: float, quantum: ItuChannel, mux: MuxSpec) -> float:
    """Matched photons per LO mode for in-band power spread over one grid slot."""
    return 0.5 * power_w / (quantum.photon_energy_j * mux.bandwidth_hz)


# -- secondary sources -------------------------------------------------------------------

def leakage_noise(channels: Iterable[WdmChannel], mux: MuxSpec, system: CvqkdSystem,
                  link: FiberLink, kappa: float = LEAKAGE_KAPPA) -> ShotNoise:
    """Unmatched photons of forward channels leaking through DEMUX isolation."""
    if system.lo_photons <= 0:
        raise ValueError("LO photon number must be > 0")
    t = fiber_transmission(link) * mux.eta_D
    slot_s = system.pulse_ns * 1e-9
    q = system.quantum_channel
    xi = 0.0
    for ch in channels:
        if ch.direction != Direction.FORWARD:
            continue
        p_w = ch.power_mw * 1e-3 * t * db_to_linear(mux.isolation_db(ch.itu, q))
        n_slot = p_w * slot_s / ch.itu.photon_energy_j
        xi += 2 * n_slot / system.lo_photons * kappa
    return ShotNoise(xi, Reference.AT_BOB)


def _fwm_efficiency(link: FiberLink, delta_beta_per_km: float) -> float:
    a, L = link.alpha_lin_per_km, link.length_km
    if L == 0:
        return 1.0
    e = math.exp(-a * L)
    return (a * a / (a * a + delta_beta_per_km ** 2)
            * (1 + 4 * e * math.sin(delta_beta_per_km * L / 2) ** 2 / (1 - e) ** 2))


def _fwm_phase_mismatch(link: FiberLink, wavelength_nm: float, df1_hz: float, df2_hz: float) -> float:
    lam = wavelength_nm * 1e-9
    d_s_m2 = link.dispersion_ps_nm_km * 1e-6  # ps/(nm km) -> s/m^2
    return 2 * math.pi * lam ** 2 / C_M_S * d_s_m2 * abs(df1_hz * df2_hz) * 1e3  # per km


def _fwm_shape(link: FiberLink, spacing_hz: float, wavelength_nm: float) -> float:
    db = _fwm_phase_mismatch(link, wavelength_nm, spacing_hz, spacing_hz)
    leff = effective_length(link)
    return _fwm_efficiency(link, db) * leff ** 2 * fiber_transmission(link)


def fwm_noise(pumps: Sequence[WdmChannel], link: FiberLink, quantum: ItuChannel,
              mux: MuxSpec) -> ShotNoise:
    """Degenerate FWM product 2 f1 - f2 of two forward pumps landing on the quantum channel.

    Product power scales as P1^2 P2 and with the phase-matching efficiency and
    effective length, normalized to the 25 km / 100 GHz reference power.
    """
    p1, p2 = pumps
    if p1.itu.index == p2.itu.index:
        raise ValueError("FWM pumps must be at different wavelengths")
    if p1.direction != Direction.FORWARD or p2.direction != Direction.FORWARD:
        return ShotNoise(0.0, Reference.AT_BOB)
    q = quantum.index
    if 2 * p1.itu.index - p2.itu.index == q:
        deg, other = p1, p2
    elif 2 * p2.itu.index - p1.itu.index == q:
        deg, other = p2, p1
    else:
        return ShotNoise(0.0, Reference.AT_BOB)
    pd, po = deg.power_mw, other.power_mw
    if pd == 0 or po == 0:
        return ShotNoise(0.0, Reference.AT_BOB)
    spacing_hz = abs(deg.itu.frequency_thz - other.itu.frequency_thz) * 1e12
    ref_link = link.with_length(FWM_ANCHOR_LENGTH_KM)
    shape = (_fwm_shape(link, spacing_hz, quantum.wavelength_nm)
             / _fwm_shape(ref_link, FWM_ANCHOR_SPACING_GHZ * 1e9, quantum.wavelength_nm))
    p_w = dbm_to_mw(FWM_ANCHOR_DBM) * 1e-3 * pd * pd * po * shape
    return matched_noise_to_excess(_band_photons(p_w * mux.eta_D, quantum, mux))


def fwm_total(channels: Sequence[WdmChannel], link: FiberLink, quantum: ItuChannel,
              mux: MuxSpec) -> ShotNoise:
    fwd = [c for c in channels if c.direction == Direction.FORWARD and c.power_mw > 0]
    xi = 0.0
    for i in range(len(fwd)):
        for j in range(i + 1, len(fwd)):
            if fwd[i].itu.index != fwd[j].itu.index:
                xi += fwm_noise((fwd[i], fwd[j]), link, quantum, mux).value
    return ShotNoise(xi, Reference.AT_BOB)


def ase_noise(gain: float, n_sp: float = 1.5, kappa_filter: float = ASE_FILTER_KAPPA) -> ShotNoise:
    """Matched ASE photons from one EDFA behind the Alice-side MUX."""
    if gain < 1:
        raise ValueError(f"amplifier gain must be >= 1, got {gain}")
    if n_sp < 1:
        raise ValueError(f"n_sp must be >= 1, got {n_sp}")
    return matched_noise_to_excess(n_sp * (gain - 1) * kappa_filter)


def sideband_noise(channel: WdmChannel, quantum: ItuChannel, mux: MuxSpec, link: FiberLink,
                   suppression_db: float = -40.0) -> ShotNoise:
    """Laser sideband light at the quantum wavelength, filtered by the MUX port and the fiber."""
    if suppression_db >= 0:
        raise ValueError("sideband suppression must be < 0 dB")
    if channel.direction != Direction.FORWARD or suppression_db == -math.inf:
        return ShotNoise(0.0, Reference.AT_BOB)
    p_w = (channel.power_mw * 1e-3 * db_to_linear(suppression_db)
           * db_to_linear(mux.isolation_db(channel.itu, quantum))
           * fiber_transmission(link) * mux.eta_D)
    return matched_noise_to_excess(_band_photons(p_w, quantum, mux))


def xpm_phase(channel: WdmChannel, link: FiberLink, p_signal_mw: float | None = None,
              p_lo_mw: float = 0.0) -> float:
    """Relative signal/LO phase shift 4 pi n2 L_eff (P_s - P_lo) / (lambda_c A_eff), radians."""
    p_s = channel.power_mw if p_signal_mw is None else p_signal_mw
    leff_m = effective_length(link) * 1e3
    lam_m = channel.itu.wavelength_nm * 1e-9
    a_eff_m2 = link.a_eff_um2 * 1e-12
    return 4 * math.pi * link.n2_m2_per_mw * leff_m * (p_s - p_lo_mw) / (lam_m * a_eff_m2)


def xpm_noise(channel: WdmChannel, link: FiberLink, system: CvqkdSystem,
              overlap: Overlap = Overlap.WORST_CASE, var_scale: float = XPM_VAR_SCALE) -> ShotNoise:
    """Phase noise V_A Var(phi) from an on-off keyed co-propagating channel (input-referred).

    WORST_CASE: OOK at the QKD clock, signal slot sees {0, P} with equal odds and the
    LO slot is dark. UNIFORM: OOK much faster than the pulse, each pulse averages
    ``ook_rate * pulse`` bits. Counter-propagating channels average out.
    """
    if (channel.modulation != Modulation.OOK or overlap == Overlap.NONE
            or channel.direction != Direction.FORWARD):
        return ShotNoise(0.0, Reference.AT_ALICE)
    phi_max = xpm_phase(channel, link)
    if overlap == Overlap.WORST_CASE:
        var = phi_max ** 2 / 4
    else:
        rate = channel.ook_rate_hz or system.clock_hz
        bits = max(rate * system.pulse_ns * 1e-9, 1.0)
        var = phi_max ** 2 / (2 * bits)
    return ShotNoise(system.v_a * var * var_scale, Reference.AT_ALICE)


# -- budget --------------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    system: CvqkdSystem
    link: FiberLink
    channels: tuple[WdmChannel, ...] = ()
    mux: MuxSpec = field(default_factory=MuxSpec)
    profile: RamanProfile = field(default_factory=RamanProfile.flat)
    amplifier_gain: float = 1.0
    n_sp: float = 1.5
    sideband_suppression_db: float = -40.0
    xpm_overlap: Overlap = Overlap.WORST_CASE
    disabled: frozenset[str] = frozenset()

    def with_channels(self, channels: Iterable[WdmChannel]) -> "Scenario":
        return replace(self, channels=tuple(channels))

    def with_length(self, length_km: float) -> "Scenario":
        return replace(self, link=self.link.with_length(length_km))

    @property
    def transmission(self) -> float:
        return channel_transmission(self.link, self.mux)

    def validate(self) -> list[str]:
        """Raise on hard errors, return warnings."""
        unknown = set(self.disabled) - set(SOURCES)
        if unknown:
            raise ValueError(f"unknown noise sources: {sorted(unknown)}")
        q = self.system.quantum_channel
        warnings = []
        for ch in self.channels:
            if ch.itu.index == q.index:
                raise ValueError(f"classical channel {ch.itu.index} collides with the quantum channel")
            if ch.itu.wavelength_nm <= q.wavelength_nm:
                warnings.append(
                    f"channel {ch.itu.index} ({ch.itu.wavelength_nm:.2f} nm) is not at a longer "
                    f"wavelength than the quantum channel: Stokes configuration")
        return warnings


@dataclass(frozen=True)
class NoiseBudget:
    entries: dict[str, ShotNoise]
    total: ShotNoise
    reference: Reference
    transmission: float
    eta_D: float
    rationale: dict[str, str]
    warnings: tuple[str, ...] = ()

    def converted(self, reference: Reference) -> "NoiseBudget":
        if reference == self.reference:
            return self
        t_prime = self.transmission / self.eta_D
        if reference == Reference.AT_ALICE:
            conv = {k: excess_to_input_referred(v, self.eta_D, t_prime) for k, v in self.entries.items()}
        else:
            conv = {k: input_to_output_referred(v, self.eta_D, t_prime) for k, v in self.entries.items()}
        total = ShotNoise(math.fsum(v.value for v in conv.values()), reference)
        return replace(self, entries=conv, total=total, reference=reference)

    @property
    def coexistence(self) -> float:
        """Total minus the system contribution."""
        return self.total.value - self.entries["System"].value


def source_contributions(sc: Scenario) -> dict[str, ShotNoise]:
    """Each source in its native reference."""
    sys_, link, mux = sc.system, sc.link, sc.mux
    q = sys_.quantum_channel
    zero_bob = ShotNoise(0.0, Reference.AT_BOB)
    out: dict[str, ShotNoise] = {}

    raman = {Direction.FORWARD: 0.0, Direction.BACKWARD: 0.0}
    if link.length_km > 0:
        for ch in sc.channels:
            n = raman_matched_photons(ch, link, sc.profile, mux.eta_D, q.wavelength_nm)
            raman[ch.direction] += matched_noise_to_excess(n).value
    out["SASRS_fwd"] = ShotNoise(raman[Direction.FORWARD], Reference.AT_BOB)
    out["SASRS_bwd"] = ShotNoise(raman[Direction.BACKWARD], Reference.AT_BOB)
    out["Leakage"] = leakage_noise(sc.channels, mux, sys_, link)
    out["FWM"] = fwm_total(sc.channels, link, q, mux)
    out["ASE"] = ase_noise(sc.amplifier_gain, sc.n_sp) if sc.amplifier_gain > 1 else zero_bob
    sb = 0.0
    for ch in sc.channels:
        sb += sideband_noise(ch, q, mux, link, sc.sideband_suppression_db).value
    out["Sideband"] = ShotNoise(sb, Reference.AT_BOB)
    out["XPM"] = ShotNoise(math.fsum(xpm_noise(ch, link, sys_, sc.xpm_overlap).value
                                     for ch in sc.channels), Reference.AT_ALICE)
    for name in ZERO_RATIONALE:
        out[name] = zero_bob
    out["System"] = sys_.xi_system
    for name in sc.disabled:
        out[name] = ShotNoise(0.0, out[name].reference)
    return out


def total_noise_budget(sc: Scenario, reference: Reference = Reference.AT_ALICE) -> NoiseBudget:
    warnings = sc.validate()
    T = sc.transmission
    eta_D = sc.mux.eta_D
    t_prime = T / eta_D
    entries = {}
    for name, xi in source_contributions(sc).items():
        if xi.reference == reference:
            entries[name] = xi
        elif reference == Reference.AT_ALICE:
            entries[name] = excess_to_input_referred(xi, eta_D, t_prime)
        else:
            entries[name] = input_to_output_referred(xi, eta_D, t_prime)
    rationale = dict(ZERO_RATIONALE)
    rationale.update({n: "disabled in scenario" for n in sc.disabled})
    total = ShotNoise(math.fsum(v.value for v in entries.values()), reference)
    return NoiseBudget(entries, total, reference, T, eta_D, rationale, tuple(warnings))


# -- Raman coefficient fit ---------------------------------------------------------------

@dataclass(frozen=True)
class RamanMeasurement:
    pump_nm: float
    length_km: float
    direction: Direction
    power_in_mw: float
    scattered_mw: float


def fit_raman_coefficient(measurements: Sequence[RamanMeasurement], band_nm: float = 0.8,
                          alpha_db_per_km: float = 0.2, quantum_nm: float = 1531.12,
                          eta_D: float = 1.0) -> RamanProfile:
    """Least-squares beta per pump wavelength from scattered in-band power.

    Power form of the Raman photon count: P_scat = eta_D P_in beta band geometry(L).
    """
    if band_nm <= 0:
        raise ValueError("band must be > 0 nm")
    if not measurements:
        raise ValueError("no measurements")
    groups: dict[float, list[tuple[float, float]]] = {}
    for m in measurements:
        if m.length_km <= 0:
            raise ValueError(f"measurement at {m.pump_nm} nm has zero length: geometry term vanishes")
        geo = raman_geometry_km(m.direction, FiberLink(m.length_km, alpha_db_per_km))
        g = eta_D * m.power_in_mw * band_nm * geo
        groups.setdefault(round(m.pump_nm, 4), []).append((g, m.scattered_mw))
    rows = []
    for pump in sorted(groups):
        g, y = np.array(groups[pump]).T
        beta = float(np.dot(g, y) / np.dot(g, g))
        rows.append((pump, quantum_nm, min(max(beta, 0.0), 1e-6)))
    return RamanProfile(tuple(rows))


def read_raman_measurements(path: str | Path) -> list[RamanMeasurement]:
    """CSV with header ``pump_nm,length_km,direction,power_in_mw,scattered_mw``."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = ["pump_nm", "length_km", "direction", "power_in_mw", "scattered_mw"]
        if reader.fieldnames != need:
            raise ValueError(f"{path}: header must be {','.join(need)}")
        for lineno, r in enumerate(reader, start=2):
            try:
                out.append(RamanMeasurement(float(r["pump_nm"]), float(r["length_km"]),
                                            Direction(r["direction"]), float(r["power_in_mw"]),
                                            float(r["scattered_mw"])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out
