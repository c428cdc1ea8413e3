import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qkd_coexist.estimation import (
    AcquisitionConfig,
    DriftModel,
    Schedule,
    _walk_block_means,
    drift_curve,
    estimate_T_xi,
    expected_relative_drift,
    random_walk_step,
    run_schedule_experiment,
    simulate_homodyne_session,
    write_block_dump,
)
from qkd_coexist.keyrate import CvqkdSystem, xi_estimator_std

SYSTEM = CvqkdSystem()
T25 = 10 ** -0.6


def cfg(n=400_000, block=100_000, seed=0, drift=None, schedule=Schedule.ALTERNATING):
    return AcquisitionConfig(n, block, schedule, drift or DriftModel.none(), seed)


# -- drift model ---------------------------------------------------------------------

def test_random_walk_step_matches_direct_walk():
    # oracle: explicit cumulative sums, mean |difference| of consecutive window means
    w, s = 500, 1e-3
    rng = np.random.default_rng(1)
    walks = np.cumsum(rng.normal(0, s, (4000, 2 * w)), axis=1)
    d = np.abs(walks[:, w:].mean(axis=1) - walks[:, :w].mean(axis=1))
    assert d.mean() == pytest.approx(expected_relative_drift(w, s), rel=0.05)
    assert random_walk_step(w, expected_relative_drift(w, s)) == pytest.approx(s, rel=1e-12)


def test_block_means_have_walk_statistics():
    # discrete walk: Var(block mean - block start) = s^2 (m+1)(2m+1)/(6m)
    m, s = 400, 1.0
    rng = np.random.default_rng(3)
    walks = np.cumsum(rng.normal(0, s, (20000, m)), axis=1)
    oracle = walks.mean(axis=1).var()
    means = np.array([_walk_block_means(np.random.default_rng(k), 1, m, s)[0] for k in range(20000)])
    assert means.var() == pytest.approx(oracle, rel=0.05)


def test_drift_anchor_value():
    step = random_walk_step()
    assert step == pytest.approx(1.628102822756102e-07, rel=1e-12)
    assert expected_relative_drift(2e8, step) == pytest.approx(1.5e-3, rel=1e-12)


def test_drift_curve_is_increasing_and_anchored():
    c = AcquisitionConfig(20_000_000, 100_000, drift=DriftModel(), seed=5)
    pts = drift_curve(c, [100_000, 1_000_000, 2_000_000], n_seeds=60)
    drifts = [p.drift for p in pts]
    assert drifts == sorted(drifts)
    for p in pts:
        assert p.drift == pytest.approx(expected_relative_drift(p.window, random_walk_step()), rel=0.2)


# -- acquisition -----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        AcquisitionConfig(250_000, 100_000)
    with pytest.raises(ValueError):
        AcquisitionConfig(300_000, 100_000)  # odd number of blocks
    with pytest.raises(ValueError):
        AcquisitionConfig(200_000, 100_000, seed=-1)
    with pytest.raises(ValueError):
        DriftModel("sinusoid")


@pytest.mark.parametrize("method", ["pulses", "stats"])
def test_same_seed_is_bit_identical(method):
    a = simulate_homodyne_session(SYSTEM, T25, 0.03, cfg(seed=9, drift=DriftModel()), method)
    b = simulate_homodyne_session(SYSTEM, T25, 0.03, cfg(seed=9, drift=DriftModel()), method)
    c = simulate_homodyne_session(SYSTEM, T25, 0.03, cfg(seed=10, drift=DriftModel()), method)
    for f in ("sxx", "sxy", "syy", "n0"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.syy, c.syy)


def test_schedules_assign_blocks():
    alt = simulate_homodyne_session(SYSTEM, T25, 0.03, cfg(n=800_000), "stats")
    seq = simulate_homodyne_session(SYSTEM, T25, 0.03, cfg(n=800_000, schedule=Schedule.SEQUENTIAL),
                                    "stats")
    assert alt.kind.tolist() == [0, 1] * 4
    assert seq.kind.tolist() == [0] * 4 + [1] * 4


@pytest.mark.parametrize("method", ["pulses", "stats"])
def test_moments_match_model(method):
    n, m = 4_000_000, 200_000
    s = simulate_homodyne_session(SYSTEM, T25, 0.03, cfg(n=n, block=m, seed=2), method)
    t2 = SYSTEM.eta_B * T25
    n_sig = int(s.n[s.signal].sum())
    n_shot = int(s.n[s.shot].sum())
    cov = s.sxy[s.signal].sum() / n_sig
    cov_true = math.sqrt(t2) * SYSTEM.v_a
    vb = t2 * SYSTEM.v_a + 1 + t2 * 0.03 + SYSTEM.v_el
    assert abs(cov - cov_true) < 5 * math.sqrt((SYSTEM.v_a * vb + cov_true ** 2) / n_sig)
    shot = s.syy[s.shot].sum() / n_shot
    assert abs(shot - (1 + SYSTEM.v_el)) < 5 * math.sqrt(2 / n_shot) * (1 + SYSTEM.v_el)
    var_b = s.syy[s.signal].sum() / n_sig
    assert abs(var_b - vb) < 5 * math.sqrt(2 / n_sig) * vb


def test_pulse_and_stats_paths_agree_in_distribution():
    xi_p, xi_s = [], []
    for k in range(300):
        c = cfg(n=20_000, block=10_000, seed=k)
        xi_p.append(estimate_T_xi(simulate_homodyne_session(SYSTEM, 0.5, 0.05, c, "pulses"),
                                  SYSTEM).xi_hat)
        xi_s.append(estimate_T_xi(simulate_homodyne_session(SYSTEM, 0.5, 0.05, c, "stats"),
                                  SYSTEM).xi_hat)
    assert stats.ks_2samp(xi_p, xi_s).pvalue > 1e-3


def test_estimator_unbiased_and_std_matches_analytic():
    T, xi = 10 ** -0.35, 0.04
    est = [estimate_T_xi(simulate_homodyne_session(SYSTEM, T, xi, cfg(n=20_000, block=10_000, seed=k),
                                                   "stats"), SYSTEM) for k in range(3000)]
    vals = np.array([e.xi_hat for e in est])
    sigma = xi_estimator_std(SYSTEM.v_a, T, xi, SYSTEM.eta_B, SYSTEM.v_el, 10_000)
    assert vals.std() == pytest.approx(sigma, rel=0.1)
    assert abs(vals.mean() - xi) < 5 * sigma / math.sqrt(vals.size) + 0.05 * sigma
    t_hat = np.array([e.t_hat for e in est])
    assert t_hat.mean() == pytest.approx(T, rel=0.01)


@given(st.integers(0, 2 ** 64 - 1))
@settings(max_examples=10, deadline=None)
def test_any_u64_seed_runs(seed):
    s = simulate_homodyne_session(SYSTEM, T25, 0.03, cfg(n=200_000, seed=seed), "stats")
    r = estimate_T_xi(s, SYSTEM)
    assert math.isfinite(r.xi_hat) and r.n_used == 100_000


def test_simulation_rejects_bad_inputs():
    with pytest.raises(ValueError):
        simulate_homodyne_session(SYSTEM, 1.5, 0.03, cfg())
    with pytest.raises(ValueError):
        simulate_homodyne_session(SYSTEM, T25, -0.1, cfg())
    with pytest.raises(ValueError):
        simulate_homodyne_session(SYSTEM, T25, 0.03, cfg(), "exact")


def test_alternating_removes_drift_bias():
    # small version of the schedule comparison: 4e7 pulses, drift amplified 10x
    drift = DriftModel("random_walk", 10 * random_walk_step())
    base = AcquisitionConfig(40_000_000, 100_000, Schedule.ALTERNATING, drift, 0)
    alt = run_schedule_experiment(SYSTEM, T25, 0.03, base, n_seeds=20)
    seq = run_schedule_experiment(SYSTEM, T25, 0.03,
                                  replace(base, schedule=Schedule.SEQUENTIAL, block_pulses=20_000_000),
                                  n_seeds=20)
    assert seq.drift_bias > 10 * alt.drift_bias


def test_block_dump(tmp_path):
    s = simulate_homodyne_session(SYSTEM, T25, 0.03, cfg(), "stats")
    p = tmp_path / "blocks.csv"
    write_block_dump(s, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "block_index,kind,variance,covariance"
    assert len(lines) == 5
    assert lines[1].startswith("0,shot,") and lines[1].endswith(",")
    assert lines[2].startswith("1,signal,")
