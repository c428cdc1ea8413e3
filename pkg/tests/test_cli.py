import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from qkd_coexist.allocator import max_tolerable_power
from qkd_coexist.cli import EXIT_INFEASIBLE, EXIT_INVALID, EXIT_OK, main
from qkd_coexist.config import ScenarioError, load_scenario
from qkd_coexist.keyrate import CvqkdSystem
from qkd_coexist.noise import Direction

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"


def run(tmp_path, *args, name="out.csv"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def rows(path):
    text = "".join(l for l in path.read_text().splitlines(True) if not l.startswith("#"))
    return list(csv.DictReader(io.StringIO(text)))


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- scenario parsing --------------------------------------------------------------------

def test_unknown_key_reports_line_and_key(tmp_path):
    p = write(tmp_path, "[link]\nlength_km = 10\nlenght = 3\n")
    with pytest.raises(ScenarioError, match=r"s\.toml:3: link\.lenght: unknown key"):
        load_scenario(p)


@pytest.mark.parametrize("text,match", [
    ("[bogus]\nx = 1\n", "unknown key"),
    ("[link]\nlength_km = 'far'\n", "expected a number"),
    ("[[channels]]\nindex = 34\ncolour = 'red'\n", "unknown key"),
    ("[[channels]]\ndirection = 'forward'\n", "missing index"),
    ("[[channels]]\nindex = 58\n", "collides"),
    ("[[channels]]\nindex = 99\n", "C band"),
    ("[sweep]\naxis = 'time'\n", "sweep.axis"),
    ("[link\n", "s.toml"),
])
def test_invalid_scenarios(tmp_path, text, match):
    with pytest.raises(ScenarioError, match=match):
        load_scenario(write(tmp_path, text))


def test_defaults_build_a_scenario():
    ls = load_scenario(None)
    assert ls.system == CvqkdSystem()
    assert ls.scenario.channels == ()
    assert ls.config["simulation"]["drift_step"] == pytest.approx(1.628102822756102e-07)


def test_env_defaults_override(tmp_path, monkeypatch):
    alt = write(tmp_path, "[system]\neta_B = 0.5\n", "alt.toml")
    monkeypatch.setenv("QKD_COEXIST_DEFAULTS", str(alt))
    assert load_scenario(None).system.eta_B == 0.5
    bad = write(tmp_path, "[system]\netaB = 0.5\n", "bad.toml")
    monkeypatch.setenv("QKD_COEXIST_DEFAULTS", str(bad))
    with pytest.raises(ScenarioError, match="bad.toml"):
        load_scenario(None)


def test_profile_path_is_relative_to_scenario(tmp_path):
    (tmp_path / "prof.csv").write_text("pump_nm,quantum_nm,beta_per_km_nm\n1550.00,1531.12,2.0e-09\n")
    ls = load_scenario(write(tmp_path, 'raman_profile = "prof.csv"\n'))
    assert ls.scenario.profile.beta(1550.0, 1531.12) == pytest.approx(2e-9)


# -- commands ------------------------------------------------------------------------------

def test_budget_without_channels_is_system_only(tmp_path):
    code, out = run(tmp_path, "budget")
    assert code == EXIT_OK
    r = {(x["source"], x["reference"]): float(x["value_n0"]) for x in rows(out)}
    assert r[("System", "alice")] == 0.03
    assert r[("Total", "alice")] == 0.03


def test_budget_single_forward_channel(tmp_path):
    code, out = run(tmp_path, "budget", "--scenario", str(SCEN / "budget_25km.toml"))
    assert code == EXIT_OK
    r = {(x["source"], x["reference"]): float(x["value_n0"]) for x in rows(out)}
    ls = load_scenario(SCEN / "budget_25km.toml")
    # reference value: ~1.3e-3 N0 at Bob for 0 dBm forward over 25 km
    at_bob = r[("SASRS_fwd", "alice")] * ls.scenario.transmission
    assert 1.0e-3 <= at_bob <= 1.7e-3


def test_metadata_header(tmp_path):
    code, out = run(tmp_path, "budget", "--seed", "42")
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# qkd_coexist ")
    assert lines[1] == "# command: budget"
    assert lines[2] == "# seed: 42"
    cfg = json.loads(lines[3][len("# config: "):])
    assert cfg["seed"] == 42 and cfg["system"]["eta_B"] == 0.6
    assert lines[4].startswith("# calibration: ")


def test_malformed_scenario_writes_nothing(tmp_path, capsys):
    bad = write(tmp_path, "[link]\nlenght_km = 3\n")
    code, out = run(tmp_path, "budget", "--scenario", str(bad))
    assert code == EXIT_INVALID
    assert not out.exists()
    assert "lenght_km" in capsys.readouterr().err


def test_power_sweep_is_affine(tmp_path):
    code, out = run(tmp_path, "sweep", "--scenario", str(SCEN / "sweep_power_25km.toml"))
    assert code == EXIT_OK
    data = rows(out)
    x = np.array([float(r["x"]) for r in data])
    y = np.array([float(r["xi_total_n0"]) for r in data])
    assert x[0] == 0.0 and x[-1] == 8.0 and len(x) == 17
    fit = np.polyfit(x, y, 1)
    resid = y - np.polyval(fit, x)
    r2 = 1 - resid @ resid / ((y - y.mean()) @ (y - y.mean()))
    assert r2 > 0.9999
    assert set(data[0]) == {"x", "xi_total_n0", "key_bits_per_pulse", "key_bits_per_s", "positive",
                            "threshold_n0"}


def test_empty_sweep_range_rejected(tmp_path):
    s = write(tmp_path, "[sweep]\nstart = 2.0\nstop = 2.0\n[[channels]]\nindex = 34\n")
    code, out = run(tmp_path, "sweep", "--scenario", str(s))
    assert code == EXIT_INVALID and not out.exists()


def test_distance_sweep_matches_envelope(tmp_path):
    s = write(tmp_path, "[sweep]\naxis = 'distance_km'\nstart = 25.0\nstop = 75.0\nnum = 3\n"
                        "[[channels]]\nindex = 34\n")
    code, out = run(tmp_path, "sweep", "--scenario", str(s), "--jobs", "2")
    assert code == EXIT_OK
    data = rows(out)
    assert [float(r["x"]) for r in data] == [25.0, 50.0, 75.0]
    for r in data:
        p = max_tolerable_power(float(r["x"]), Direction.FORWARD, CvqkdSystem())
        assert float(r["null_key_power_mw"]) == pytest.approx(p, rel=1e-9)


def test_keyrate_and_infeasible_exit(tmp_path):
    code, out = run(tmp_path, "keyrate", "--scenario", str(SCEN / "keyrate_75km.toml"))
    assert code == EXIT_OK
    r = rows(out)[0]
    assert r["positive"] == "true" and 100 < float(r["key_bits_per_s"]) < 2000
    far = write(tmp_path, "[link]\nlength_km = 400.0\n")
    code, out = run(tmp_path, "keyrate", "--scenario", str(far), name="far.csv")
    assert code == EXIT_INFEASIBLE
    assert rows(out)[0]["positive"] == "false"


def test_finite_size_penalty(tmp_path):
    s = write(tmp_path, "[finite_size]\nn_samples = 100000000\n")
    code, out = run(tmp_path, "keyrate", "--scenario", str(s))
    r = rows(out)[0]
    assert float(r["xi_effective_n0"]) > float(r["xi_total_n0"])


def test_allocate_wdm_pon(tmp_path):
    code, out = run(tmp_path, "allocate", "--scenario", str(SCEN / "allocate_wdm_pon_25km.toml"))
    assert code == EXIT_OK
    data = rows(out)
    assert {r["role"] for r in data} <= {"quantum", "fwd", "bwd", "unused"}
    assert sum(r["role"] == "fwd" for r in data) == sum(r["role"] == "bwd" for r in data) > 0


def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--scenario", str(SCEN / "simulate_alternating.toml")]
    _, a = run(tmp_path, *args, name="a.csv")
    _, b = run(tmp_path, *args, name="b.csv")
    _, c = run(tmp_path, *args, "--seed", "8", name="c.csv")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
    assert [r["seed"] for r in rows(a)] == ["7", "8", "9", "10", "11"]
    assert rows(a)[1] == rows(c)[0]


def test_simulate_block_dump(tmp_path):
    dump = tmp_path / "blocks.csv"
    code, _ = run(tmp_path, "simulate", "--scenario", str(SCEN / "simulate_alternating.toml"),
                  "--dump", str(dump))
    assert code == EXIT_OK
    assert dump.read_text().startswith("block_index,kind,variance,covariance\n")
    assert len(dump.read_text().splitlines()) == 21


def test_fit_raman_bundled_dataset(tmp_path):
    code, out = run(tmp_path, "fit-raman", "--scenario", str(SCEN / "fit_raman.toml"))
    assert code == EXIT_OK
    for r in rows(out):
        lam = float(r["pump_nm"])
        truth = 1.5e-9 + 1.6e-9 * (lam - 1532.68) / (1566.31 - 1532.68)
        assert float(r["beta_per_km_nm"]) == pytest.approx(truth, rel=0.02)


def test_fit_raman_needs_measurements(tmp_path):
    code, out = run(tmp_path, "fit-raman")
    assert code == EXIT_INVALID and not out.exists()


def test_table_format(tmp_path, capsys):
    assert main(["budget", "--format", "table"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "System" in text and not text.startswith("#")


def test_plot_stub(capsys):
    assert main(["plot-stub", "sweep", "--csv", "fig5.csv"]) == EXIT_OK
    text = capsys.readouterr().out
    assert 'pd.read_csv("fig5.csv", comment="#")' in text
    assert 'y="xi_total_n0"' in text
    compile(text, "stub.py", "exec")


def test_bad_seed_rejected():
    with pytest.raises(SystemExit):
        main(["budget", "--seed", str(2 ** 64)])


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "qkd_coexist.cli", "budget"], capture_output=True,
                       text=True, check=False)
    assert r.returncode == 0 and "Total" in r.stdout
