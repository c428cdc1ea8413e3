"""Units, physical constants, ITU grid arithmetic and elementary fiber math."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

C_NM_THZ = 299792.458  # speed of light, nm * THz
C_M_S = 299792458.0
H_PLANCK = 6.62607015e-34

GRID_ANCHOR_THZ = 190.0
GRID_SPACING_THZ = 0.1
C_BAND_NM = (1528.0, 1568.0)


def dbm_to_mw(p_dbm: float) -> float:
    if not math.isfinite(p_dbm):
        raise ValueError(f"power must be finite, got {p_dbm} dBm")
    return 10.0 ** (p_dbm / 10.0)


def mw_to_dbm(p_mw: float) -> float:
    if not math.isfinite(p_mw) or p_mw < 0:
        raise ValueError(f"power must be finite and >= 0, got {p_mw} mW")
    if p_mw == 0:
        return -math.inf
    return 10.0 * math.log10(p_mw)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class ItuChannel:
    """A channel of the 100 GHz C-band grid, f = 190.0 THz + index * 0.1 THz."""

    index: int

    def __post_init__(self):
        lo, hi = C_BAND_NM
        wl = self.wavelength_nm
        if not (lo <= wl <= hi):
            lo_idx, hi_idx = c_band_indices()[0], c_band_indices()[-1]
            raise ValueError(
                f"ITU index {self.index} ({wl:.2f} nm) is outside the C band "
                f"[{lo}, {hi}] nm; accepted indices are {lo_idx}..{hi_idx}"
            )

    @property
    def frequency_thz(self) -> float:
        return GRID_ANCHOR_THZ + GRID_SPACING_THZ * self.index

    @property
    def wavelength_nm(self) -> float:
        return C_NM_THZ / self.frequency_thz

    @property
    def photon_energy_j(self) -> float:
        return H_PLANCK * self.frequency_thz * 1e12


def itu_channel(index: int) -> ItuChannel:
    return ItuChannel(int(index))


def c_band_indices() -> list[int]:
    """All grid indices whose wavelength lies inside the C band."""
    lo, hi = C_BAND_NM
    first = math.ceil((C_NM_THZ / hi - GRID_ANCHOR_THZ) / GRID_SPACING_THZ - 1e-9)
    last = math.floor((C_NM_THZ / lo - GRID_ANCHOR_THZ) / GRID_SPACING_THZ + 1e-9)
    return list(range(first, last + 1))


class Reference(str, Enum):
    """Where an excess-noise value is referred to."""

    AT_ALICE = "alice"  # input-referred
    AT_BOB = "bob"  # output, Bob's input port (eta_B = 1 convention)


@dataclass(frozen=True)
class ShotNoise:
    """An excess-noise variance in shot-noise units, tagged with its reference point."""

    value: float
    reference: Reference = Reference.AT_ALICE

    def __float__(self):
        return float(self.value)

    def __add__(self, other: "ShotNoise") -> "ShotNoise":
        if not isinstance(other, ShotNoise):
            return NotImplemented
        if other.reference != self.reference:
            raise ValueError(
                f"cannot add noise referred to {self.reference.value} and {other.reference.value}"
            )
        return ShotNoise(self.value + other.value, self.reference)


@dataclass(frozen=True)
class FiberLink:
    length_km: float
    alpha_db_per_km: float = 0.2
    n2_m2_per_mw: float = 3e-23
    a_eff_um2: float = 83.0
    dispersion_ps_nm_km: float = 17.0

    def __post_init__(self):
        if self.length_km < 0 or not math.isfinite(self.length_km):
            raise ValueError(f"fiber length must be finite and >= 0, got {self.length_km}")
        if self.alpha_db_per_km <= 0:
            raise ValueError("attenuation must be > 0 dB/km")

    @property
    def alpha_lin_per_km(self) -> float:
        return self.alpha_db_per_km * math.log(10.0) / 10.0

    def with_length(self, length_km: float) -> "FiberLink":
        return FiberLink(length_km, self.alpha_db_per_km, self.n2_m2_per_mw,
                         self.a_eff_um2, self.dispersion_ps_nm_km)


def fiber_transmission(link: FiberLink, length_km: float | None = None) -> float:
    """Power transmission of ``length_km`` of fiber (whole link if omitted)."""
    L = link.length_km if length_km is None else length_km
    if L < 0:
        raise ValueError(f"length must be >= 0, got {L}")
    if L > link.length_km * (1 + 1e-12) and length_km is not None:
        raise ValueError(f"length {L} km exceeds link length {link.length_km} km")
    return 10.0 ** (-link.alpha_db_per_km * L / 10.0)


def effective_length(link: FiberLink, length_km: float | None = None) -> float:
    """Nonlinear effective length (1 - exp(-aL))/a in km."""
    L = link.length_km if length_km is None else length_km
    if L < 0:
        raise ValueError(f"length must be >= 0, got {L}")
    a = link.alpha_lin_per_km
    # -expm1 keeps the small-L limit exact
    return -np.expm1(-a * L) / a
