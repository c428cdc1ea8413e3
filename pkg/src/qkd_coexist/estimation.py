"""Monte Carlo of homodyne acquisition with a drifting shot-noise level.

Blocks of ``block_pulses`` pulses are either shot-noise blocks (signal port
closed, classical channels off) or signal blocks. Per block only the sufficient
statistics are kept: sum x_A^2, sum x_A x_B and sum x_B^2. They are produced
either from individual pulses or, for long acquisitions, drawn directly from
their exact (Wishart / chi-square) distribution. N_0 is held at its block-mean
value inside a block.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .keyrate import CvqkdSystem, xi_estimator_std

# relative drift of consecutive 200 s (2e8 pulse) windows at 1 MHz
DRIFT_ANCHOR_WINDOW = 2e8
DRIFT_ANCHOR_VALUE = 1.5e-3


def random_walk_step(window_pulses: float = DRIFT_ANCHOR_WINDOW,
                     relative_drift: float = DRIFT_ANCHOR_VALUE) -> float:
    """Per-pulse relative step giving ``relative_drift`` mean |difference| of consecutive window means.

    For a Gaussian random walk with step s the difference of the means of two
    consecutive windows of w pulses has variance 2 w s^2 / 3.
    """
    return relative_drift / (math.sqrt(2 / math.pi) * math.sqrt(2 * window_pulses / 3))


def expected_relative_drift(window_pulses: float, step: float) -> float:
    return math.sqrt(2 / math.pi) * step * math.sqrt(2 * window_pulses / 3)


class Schedule(str, Enum):
    ALTERNATING = "alternating"
    SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class DriftModel:
    kind: str = "random_walk"  # "none" | "random_walk"
    step_per_pulse: float = field(default_factory=random_walk_step)

    def __post_init__(self):
        if self.kind not in ("none", "random_walk"):
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.step_per_pulse < 0:
            raise ValueError("drift step must be >= 0")

    @classmethod
    def none(cls) -> "DriftModel":
        return cls("none", 0.0)

    @property
    def step(self) -> float:
        return 0.0 if self.kind == "none" else self.step_per_pulse


@dataclass(frozen=True)
class AcquisitionConfig:
    n_total_pulses: int
    block_pulses: int = 100_000
    schedule: Schedule = Schedule.ALTERNATING
    drift: DriftModel = field(default_factory=DriftModel)
    seed: int = 0

    def __post_init__(self):
        n, b = int(self.n_total_pulses), int(self.block_pulses)
        if b <= 1 or n % b:
            raise ValueError(f"block size {b} must divide the total {n}")
        if n < 2 * b:
            raise ValueError("need at least one shot-noise and one signal block")
        if (n // b) % 2:
            raise ValueError("need an even number of blocks (equal shot and signal time)")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_blocks(self) -> int:
        return int(self.n_total_pulses) // int(self.block_pulses)


@dataclass
class Session:
    """Per-block sufficient statistics; ``kind`` is 0 for shot-noise and 1 for signal blocks."""

    kind: np.ndarray
    n: np.ndarray
    sxx: np.ndarray
    sxy: np.ndarray
    syy: np.ndarray
    n0: np.ndarray  # true block-mean shot noise (diagnostic only)

    @property
    def signal(self) -> np.ndarray:
        return self.kind == 1

    @property
    def shot(self) -> np.ndarray:
        return self.kind == 0


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimationResult:
    t_hat: float
    xi_hat: float  # input-referred
    xi_hat_at_bob: float  # eta_B T xi, in Bob's homodyne output
    n_used: int
    std_xi: float
    n0_hat: float

    @property
    def t_flagged(self) -> bool:
        return self.t_hat > 1


def _block_kinds(cfg: AcquisitionConfig) -> np.ndarray:
    nb = cfg.n_blocks
    if cfg.schedule == Schedule.ALTERNATING:
        return np.arange(nb) % 2
    return (np.arange(nb) >= nb // 2).astype(int)


def _streams(seed: int):
    drift_ss, block_ss = np.random.SeedSequence(seed).spawn(2)
    return drift_ss, block_ss


def _walk_block_means(rng: np.random.Generator, n_blocks: int, block: int, step: float) -> np.ndarray:
    """Exact block means of a Gaussian random walk starting at 0, sampled block by block."""
    z_end = rng.standard_normal(n_blocks)
    z_mid = rng.standard_normal(n_blocks)
    if step == 0:
        return np.zeros(n_blocks)
    inc = step * math.sqrt(block) * z_end
    start = np.concatenate(([0.0], np.cumsum(inc)[:-1]))
    # Brownian-bridge correction: mean of the path around the chord has variance block/12
    return start + inc / 2 + step * math.sqrt(block / 12) * z_mid


def shot_noise_path(cfg: AcquisitionConfig) -> np.ndarray:
    drift_ss, _ = _streams(cfg.seed)
    rng = np.random.Generator(np.random.PCG64(drift_ss))
    return 1.0 + _walk_block_means(rng, cfg.n_blocks, int(cfg.block_pulses), cfg.drift.step)


def simulate_homodyne_session(system: CvqkdSystem, T: float, xi_true: float,
                              cfg: AcquisitionConfig, method: str = "auto") -> Session:
    """Generate shot-noise and signal blocks.

    Signal pulses: x_A ~ N(0, V_A), x_B = sqrt(eta_B T) x_A + N(0, N_0 + eta_B T xi + v_el).
    Shot-noise pulses: x_B ~ N(0, N_0 + v_el). ``method`` is ``"pulses"``,
    ``"stats"`` or ``"auto"`` (pulses up to 2e7 in total).
    """
    if xi_true < 0:
        raise ValueError("true excess noise must be >= 0")
    if not 0 < T <= 1:
        raise ValueError("transmission must be in (0, 1]")
    if method == "auto":
        method = "pulses" if cfg.n_total_pulses <= 2e7 else "stats"
    if method not in ("pulses", "stats"):
        raise ValueError(f"unknown method {method!r}")
    kinds = _block_kinds(cfg)
    n0 = shot_noise_path(cfg)
    m = int(cfg.block_pulses)
    nb = cfg.n_blocks
    v_a, t = system.v_a, math.sqrt(system.eta_B * T)
    s2 = n0 + system.eta_B * T * xi_true + system.v_el
    shot_var = n0 + system.v_el
    _, block_ss = _streams(cfg.seed)

    if method == "stats":
        rng = np.random.Generator(np.random.PCG64(block_ss))
        c1 = rng.chisquare(m, nb)
        c2 = rng.chisquare(m - 1, nb)
        z = rng.standard_normal(nb)
        s = np.sqrt(s2)
        # Bartlett decomposition of a 2x2 Wishart(m, Sigma)
        sxx = v_a * c1
        sxy = t * v_a * c1 + s * math.sqrt(v_a) * np.sqrt(c1) * z
        syy = (t * math.sqrt(v_a) * np.sqrt(c1) + s * z) ** 2 + s2 * c2
        sig = kinds == 1
        sxx = np.where(sig, sxx, 0.0)
        sxy = np.where(sig, sxy, 0.0)
        syy = np.where(sig, syy, shot_var * c1)
    else:
        sxx = np.zeros(nb)
        sxy = np.zeros(nb)
        syy = np.zeros(nb)
        for b, child in enumerate(block_ss.spawn(nb)):
            rng = np.random.Generator(np.random.PCG64(child))
            if kinds[b] == 1:
                xa = rng.normal(0.0, math.sqrt(v_a), m)
                xb = t * xa + rng.normal(0.0, math.sqrt(s2[b]), m)
                sxx[b] = xa @ xa
                sxy[b] = xa @ xb
                syy[b] = xb @ xb
            else:
                xb = rng.normal(0.0, math.sqrt(shot_var[b]), m)
                syy[b] = xb @ xb
    return Session(kinds, np.full(nb, m), sxx, sxy, syy, n0)


def estimate_T_xi(session: Session, system: CvqkdSystem) -> EstimationResult:
    """Channel parameters from the covariance, the signal variance and the shot-noise variance."""
    sig, shot = session.signal, session.shot
    if not sig.any() or not shot.any():
        raise ValueError("need at least one signal block and one shot-noise block")
    n_sig = int(session.n[sig].sum())
    n_shot = int(session.n[shot].sum())
    n0_hat = session.syy[shot].sum() / n_shot - system.v_el
    if not n0_hat > 0:
        raise CalibrationError(f"shot-noise estimate {n0_hat:.3e} is not positive")
    cov = session.sxy[sig].sum() / n_sig
    var_b = session.syy[sig].sum() / n_sig
    v_a, eta = system.v_a, system.eta_B
    eta_t = (cov / v_a) ** 2
    t_hat = eta_t / eta
    xi_bob = var_b - n0_hat - system.v_el - eta_t * v_a
    xi_in = (var_b - n0_hat - system.v_el) / eta_t - v_a
    std = xi_estimator_std(v_a, min(t_hat, 1.0), max(xi_in, 0.0), eta, system.v_el, n_sig, n_shot)
    return EstimationResult(t_hat, xi_in, xi_bob, n_sig, std, n0_hat)


@dataclass(frozen=True)
class ScheduleResult:
    xi_hat_mean: float
    drift_bias: float  # mean |xi_bob(drift) - xi_bob(no drift)|, common random numbers
    drift_bias_at_alice: float
    mean_abs_error_at_bob: float  # mean |xi_hat_at_bob - eta_B T xi_true|, statistics included
    n_seeds: int


def run_schedule_experiment(system: CvqkdSystem, T: float, xi_true: float,
                            cfg: AcquisitionConfig, n_seeds: int = 50) -> ScheduleResult:
    """Seed ensemble of one acquisition schedule; the drift part of the error is isolated
    by re-running every seed with the same block draws and no drift."""
    if n_seeds < 1:
        raise ValueError("need at least one seed")
    xi_hats, bias_bob, bias_alice, err = [], [], [], []
    target_bob = system.eta_B * T * xi_true
    for k in range(n_seeds):
        c = replace(cfg, seed=(cfg.seed + k) % 2 ** 64)
        drifted = estimate_T_xi(simulate_homodyne_session(system, T, xi_true, c, "stats"), system)
        flat = estimate_T_xi(simulate_homodyne_session(
            system, T, xi_true, replace(c, drift=DriftModel.none()), "stats"), system)
        xi_hats.append(drifted.xi_hat)
        bias_bob.append(abs(drifted.xi_hat_at_bob - flat.xi_hat_at_bob))
        bias_alice.append(abs(drifted.xi_hat - flat.xi_hat))
        err.append(abs(drifted.xi_hat_at_bob - target_bob))
    return ScheduleResult(float(np.mean(xi_hats)), float(np.mean(bias_bob)),
                          float(np.mean(bias_alice)), float(np.mean(err)), n_seeds)


@dataclass(frozen=True)
class DriftPoint:
    window: int
    drift: float  # relative difference of the true shot-noise level
    measured: float  # relative difference of the estimated shot-noise variance (includes chi^2 floor)
    pairs: int


def drift_curve(cfg: AcquisitionConfig, window_sizes: Sequence[int], n_seeds: int = 50,
                v_el: float = 0.01) -> list[DriftPoint]:
    """Mean relative difference of shot-noise variance between consecutive windows.

    The walk is sampled at the smallest window size; ``measured`` adds the sampling
    fluctuation of a variance estimate over ``window`` pulses.
    """
    windows = sorted(int(w) for w in window_sizes)
    if not windows:
        raise ValueError("no window sizes")
    g = windows[0]
    total = int(cfg.n_total_pulses)
    if any(w % g for w in windows):
        raise ValueError("window sizes must be multiples of the smallest one")
    if 2 * windows[-1] > total:
        raise ValueError("largest window pair exceeds the acquisition length")
    nsteps = total // g
    acc = {w: ([], []) for w in windows}
    for k in range(n_seeds):
        drift_ss, block_ss = _streams((cfg.seed + k) % 2 ** 64)
        rng = np.random.Generator(np.random.PCG64(drift_ss))
        path = 1.0 + _walk_block_means(rng, nsteps, g, cfg.drift.step) + v_el
        chi_rng = np.random.Generator(np.random.PCG64(block_ss))
        for w in windows:
            r = w // g
            npairs = nsteps // (2 * r)
            if npairs == 0:
                continue
            means = path[: npairs * 2 * r].reshape(npairs * 2, r).mean(axis=1)
            a, b = means[0::2], means[1::2]
            acc[w][0].append(np.abs(b - a) / a)
            est = means * chi_rng.chisquare(w, means.size) / w
            acc[w][1].append(np.abs(est[1::2] - est[0::2]) / est[0::2])
    out = []
    for w in windows:
        d = np.concatenate(acc[w][0])
        meas = np.concatenate(acc[w][1])
        out.append(DriftPoint(w, float(d.mean()), float(meas.mean()), int(d.size)))
    return out


def write_block_dump(session: Session, path: str | Path) -> None:
    """CSV ``block_index,kind,variance,covariance`` (covariance empty for shot blocks)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_index", "kind", "variance", "covariance"])
        for i in range(session.kind.size):
            n = session.n[i]
            if session.kind[i] == 1:
                w.writerow([i, "signal", repr(float(session.syy[i] / n)), repr(float(session.sxy[i] / n))])
            else:
                w.writerow([i, "shot", repr(float(session.syy[i] / n)), ""])
