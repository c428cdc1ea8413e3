"""Asymptotic secret key rate of the Gaussian-modulated coherent-state protocol.

Reverse reconciliation, homodyne detection, collective attacks, trusted
detector noise. Everything is in shot-noise units; excess noise entering the
key rate is always referred to Alice's output (input of the channel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import bisect

from .units import ItuChannel, Reference, ShotNoise, itu_channel


class NonPhysicalError(ValueError):
    """Raised when channel parameters give a covariance matrix that is not a valid quantum state."""


class InfeasibleError(RuntimeError):
    """Raised when no positive key rate can be reached."""


@dataclass(frozen=True)
class CvqkdSystem:
    """Transmitter/receiver parameters of the CV-QKD system.

    ``signal_fraction`` is the share of clock slots carrying quantum signal; with
    alternating 100 ms shot-noise / signal blocks half the slots are spent on
    shot-noise calibration.
    """

    v_a: float = 3.5
    clock_hz: float = 1e6
    lo_photons: float = 1e8
    pulse_ns: float = 50.0
    eta_B: float = 0.6
    v_el: float = 0.01
    beta_rec: float = 0.95
    xi_system: ShotNoise = field(default_factory=lambda: ShotNoise(0.03, Reference.AT_ALICE))
    quantum_channel: ItuChannel = field(default_factory=lambda: itu_channel(58))
    signal_fraction: float = 0.5

    def __post_init__(self):
        if not self.v_a > 0:
            raise ValueError(f"v_a must be > 0, got {self.v_a}")
        if not 0 < self.eta_B <= 1:
            raise ValueError(f"eta_B must be in (0, 1], got {self.eta_B}")
        if not 0 < self.beta_rec <= 1:
            raise ValueError(f"beta_rec must be in (0, 1], got {self.beta_rec}")
        if self.v_el < 0:
            raise ValueError(f"v_el must be >= 0, got {self.v_el}")
        if not 0 < self.signal_fraction <= 1:
            raise ValueError(f"signal_fraction must be in (0, 1], got {self.signal_fraction}")
        if self.xi_system.reference != Reference.AT_ALICE:
            raise ValueError("system excess noise must be referred to Alice")

    def with_va(self, v_a: float) -> "CvqkdSystem":
        return replace(self, v_a=v_a)


@dataclass(frozen=True)
class KeyRateResult:
    mutual_info_bits: float
    holevo_bits: float
    key_bits_per_pulse: float
    key_bits_per_second: float
    positive: bool


def g_entropy(x: float) -> float:
    """Von Neumann entropy of a thermal state with mean photon number x, in bits."""
    if x <= 0:
        return 0.0
    return (x + 1) * math.log2(x + 1) - x * math.log2(x)


def _pair(a: float, b: float, what: str) -> tuple[float, float]:
    disc = a * a - 4 * b
    if disc < 0:
        if disc > -1e-12 * a * a:
            disc = 0.0
        else:
            raise NonPhysicalError(f"{what}: negative discriminant {disc:.3e}")
    root = math.sqrt(disc)
    hi, lo = 0.5 * (a + root), 0.5 * (a - root)
    if lo < 0:
        raise NonPhysicalError(f"{what}: negative squared eigenvalue {lo:.3e}")
    return math.sqrt(hi), math.sqrt(lo)


def _nu_entropy(nu: float, what: str) -> float:
    # symplectic eigenvalues of a physical state are >= 1
    if nu < 1 - 1e-9:
        raise NonPhysicalError(f"{what}: symplectic eigenvalue {nu:.6f} < 1")
    return g_entropy(max((nu - 1) / 2, 0.0))


def holevo_bound(v_a: float, T: float, xi: float, eta_B: float, v_el: float) -> float:
    """Eve's Holevo information on Bob's homodyne data (entangling-cloner analysis)."""
    V = v_a + 1
    chi_line = 1 / T - 1 + xi
    chi_hom = (1 + v_el - eta_B) / eta_B
    chi_tot = chi_line + chi_hom / T

    A = V * V * (1 - 2 * T) + 2 * T + T * T * (V + chi_line) ** 2
    B = T * T * (V * chi_line + 1) ** 2
    if B < 0:
        raise NonPhysicalError("negative determinant")
    sqB = math.sqrt(B)
    nu1, nu2 = _pair(A, B, "Alice-Bob state")

    denom = T * (V + chi_tot)
    Cc = (V * sqB + T * (V + chi_line) + A * chi_hom) / denom
    Dd = sqB * (V + sqB * chi_hom) / denom
    nu3, nu4 = _pair(Cc, Dd, "conditional state")

    return (_nu_entropy(nu1, "nu1") + _nu_entropy(nu2, "nu2")
            - _nu_entropy(nu3, "nu3") - _nu_entropy(nu4, "nu4"))


def mutual_information(v_a: float, T: float, xi: float, eta_B: float, v_el: float) -> float:
    V = v_a + 1
    chi_tot = 1 / T - 1 + xi + (1 + v_el - eta_B) / (eta_B * T)
    return 0.5 * math.log2((V + chi_tot) / (1 + chi_tot))


def secret_key_rate(system: CvqkdSystem, T: float, xi_in: ShotNoise | float) -> KeyRateResult:
    """Key rate for transmission ``T`` and total excess noise ``xi_in`` referred to Alice.

    Negative rates are returned as such (``positive=False``), never clamped.
    """
    xi = _as_alice(xi_in)
    if not 0 < T <= 1:
        raise ValueError(f"transmission must be in (0, 1], got {T}")
    if xi < 0:
        raise ValueError(f"excess noise must be >= 0, got {xi}")
    i_ab = mutual_information(system.v_a, T, xi, system.eta_B, system.v_el)
    chi_be = holevo_bound(system.v_a, T, xi, system.eta_B, system.v_el)
    k = system.beta_rec * i_ab - chi_be
    return KeyRateResult(
        mutual_info_bits=i_ab,
        holevo_bits=chi_be,
        key_bits_per_pulse=k,
        key_bits_per_second=k * system.clock_hz * system.signal_fraction,
        positive=k > 0,
    )


def _as_alice(xi: ShotNoise | float) -> float:
    if isinstance(xi, ShotNoise):
        if xi.reference != Reference.AT_ALICE:
            raise ValueError("key rate needs excess noise referred to Alice")
        return xi.value
    return float(xi)


def _key(system: CvqkdSystem, T: float, xi: float) -> float:
    return secret_key_rate(system, T, xi).key_bits_per_pulse


def null_key_threshold(system: CvqkdSystem, T: float, tol: float = 1e-12) -> ShotNoise:
    """Largest input-referred excess noise that still gives a non-negative key rate."""
    if _key(system, T, 0.0) <= 0:
        raise InfeasibleError(f"no positive key rate at T={T:.4g} even without excess noise")
    hi = 1.0
    while _key(system, T, hi) > 0:
        hi *= 2
        if hi > 1e3:
            raise InfeasibleError("threshold bracket did not close")
    x = bisect(lambda xi: _key(system, T, xi), 0.0, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps,
               maxiter=400)
    if abs(_key(system, T, x)) > tol:  # pragma: no cover - bisect converges to machine precision
        raise RuntimeError("threshold bisection did not reach tolerance")
    return ShotNoise(x, Reference.AT_ALICE)


def default_va_grid() -> np.ndarray:
    return np.round(np.arange(0.5, 20.0 + 1e-9, 0.05), 10)


def optimize_va(system: CvqkdSystem, T: float, xi_in: ShotNoise | float,
                grid=None) -> float:
    """Modulation variance maximizing the key rate on ``grid``; ties go to the smaller value."""
    grid = default_va_grid() if grid is None else np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise ValueError("empty V_A grid")
    xi = _as_alice(xi_in)
    rates = np.array([_key(system.with_va(v), T, xi) for v in grid])
    best = int(np.argmax(rates))  # first maximum == smallest V_A on an ascending grid
    if rates[best] <= 0:
        raise InfeasibleError("key rate is non-positive over the whole V_A grid")
    return float(grid[best])


def xi_estimator_std(v_a: float, T: float, xi: float, eta_B: float, v_el: float,
                     n_signal: int, n_shot: int | None = None, at_bob: bool = False) -> float:
    """Asymptotic standard deviation of the excess-noise estimator.

    The estimator uses ``n_signal`` correlated (x_A, x_B) pairs for covariance and
    variance and ``n_shot`` shot-noise samples; V_A, eta_B and v_el are taken as known.
    Delta method on xi = (var_B - var_shot - C^2/V_A) V_A^2 / C^2.
    """
    n_shot = n_signal if n_shot is None else n_shot
    t2 = eta_B * T
    s2 = 1 + t2 * xi + v_el  # conditional variance of x_B given x_A
    shot = 1 + v_el
    var_bob = (2 * s2 ** 2 + 2 * t2 ** 2 * v_a ** 2) / n_signal + 2 * shot ** 2 / n_shot
    if at_bob:
        return math.sqrt(var_bob)
    v_b = t2 * v_a + s2
    var_in = (var_bob / t2 ** 2
              + 4 * xi ** 2 * (v_b / v_a + t2) / (t2 * n_signal)
              + 8 * xi * v_a / n_signal)
    return math.sqrt(var_in)


def worst_case_xi(xi_hat: float, n_samples: int | float, sigmas: float = 3.0, *,
                  v_a: float, T: float, eta_B: float, v_el: float) -> float:
    """Pessimistic input-referred excess noise: estimate plus ``sigmas`` standard deviations."""
    if n_samples <= 100:
        raise ValueError("worst-case estimate needs more than 100 samples")
    if math.isinf(n_samples):
        return xi_hat
    return xi_hat + sigmas * xi_estimator_std(v_a, T, max(xi_hat, 0.0), eta_B, v_el,
                                              int(n_samples))
