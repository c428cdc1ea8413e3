"""Command-line front end: ``qkd-coexist <command> --scenario file.toml``.

Every CSV starts with ``#`` metadata lines (tool version, command, seed, the
resolved configuration and the noise-model calibration), so identical inputs
give byte-identical files. Output is assembled in memory and written only when
the command succeeds.

Exit codes: 0 success, 2 invalid input, 3 infeasible result.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .allocator import allocate, max_tolerable_power, write_allocation_csv
from .config import LoadedScenario, ScenarioError, load_scenario
from .estimation import estimate_T_xi, simulate_homodyne_session, write_block_dump
from .keyrate import InfeasibleError, null_key_threshold, secret_key_rate, worst_case_xi
from .noise import CALIBRATION, fit_raman_coefficient, read_raman_measurements, total_noise_budget
from .units import Reference, mw_to_dbm

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3

U64_MAX = 2 ** 64 - 1


class Infeasible(Exception):
    """Command finished but its result is infeasible; carries the output to write anyway."""

    def __init__(self, message: str, text: str):
        super().__init__(message)
        self.text = text


def _g(x: float) -> str:
    return repr(float(x))


def metadata(command: str, ls: LoadedScenario) -> str:
    calib = {k: [v, note] for k, (v, note) in CALIBRATION.items()}
    lines = [
        f"# qkd_coexist {__version__}",
        f"# command: {command}",
        f"# seed: {ls.config['seed']}",
        "# config: " + json.dumps(ls.config, sort_keys=True, separators=(",", ":")),
        "# calibration: " + json.dumps(calib, sort_keys=True, separators=(",", ":")),
    ]
    return "\n".join(lines) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def effective_xi(ls: LoadedScenario, T: float, xi: float) -> float:
    """Total noise used for the key rate; finite-size worst case when ``n_samples`` is set."""
    fs = ls.config["finite_size"]
    if fs["n_samples"] <= 0:
        return xi
    s = ls.system
    return worst_case_xi(xi, fs["n_samples"], fs["sigmas"], v_a=s.v_a, T=T, eta_B=s.eta_B, v_el=s.v_el)


def _threshold(system, T) -> float | None:
    try:
        return null_key_threshold(system, T).value
    except InfeasibleError:
        return None


# -- commands -----------------------------------------------------------------------

def cmd_budget(ls: LoadedScenario, args) -> tuple[str, str]:
    budget = total_noise_budget(ls.scenario, Reference.AT_ALICE)
    at_bob = budget.converted(Reference.AT_BOB)
    notes = {k: note for k, (_, note) in CALIBRATION.items()}
    note_of = {"Leakage": notes["leakage_kappa"], "FWM": notes["fwm_anchor_dbm"],
               "ASE": notes["ase_filter_kappa"], "XPM": notes["xpm_var_scale"],
               "Sideband": notes["sideband"], "System": "calibrated system noise"}
    note_of.update(budget.rationale)
    rows = [[name, _g(v.value), v.reference.value, note_of.get(name, "")]
            for name, v in budget.entries.items()]
    rows.append(["Total", _g(budget.total.value), budget.reference.value, ""])
    rows.append(["Total", _g(at_bob.total.value), at_bob.reference.value, ""])
    text = _csv(["source", "value_n0", "reference", "note"], rows)

    width = max(len(n) for n in budget.entries)
    table = [f"{'source':<{width}}  {'at Alice [N0]':>14}  {'at Bob [N0]':>14}"]
    for name, v in budget.entries.items():
        table.append(f"{name:<{width}}  {v.value:14.4e}  {at_bob.entries[name].value:14.4e}")
    table.append(f"{'Total':<{width}}  {budget.total.value:14.4e}  {at_bob.total.value:14.4e}")
    table.append(f"T = {budget.transmission:.6f}, eta_D = {budget.eta_D:.6f}")
    table.extend(f"warning: {w}" for w in budget.warnings)
    return text, "\n".join(table) + "\n"


def cmd_keyrate(ls: LoadedScenario, args) -> tuple[str, str]:
    sc = ls.scenario
    T = sc.transmission
    xi = total_noise_budget(sc).total.value
    xi_eff = effective_xi(ls, T, xi)
    kr = secret_key_rate(ls.system, T, xi_eff)
    thr = _threshold(ls.system, T)
    row = [_g(sc.link.length_km), _g(T), _g(xi), _g(xi_eff), "" if thr is None else _g(thr),
           _g(kr.mutual_info_bits), _g(kr.holevo_bits), _g(kr.key_bits_per_pulse),
           _g(kr.key_bits_per_second), str(kr.positive).lower()]
    text = _csv(["distance_km", "transmission", "xi_total_n0", "xi_effective_n0", "threshold_n0",
                 "mutual_info_bits", "holevo_bits", "key_bits_per_pulse", "key_bits_per_s",
                 "positive"], [row])
    table = (f"distance {sc.link.length_km} km, T = {T:.6f}, xi = {xi_eff:.4e} N0 at Alice\n"
             f"key rate {kr.key_bits_per_pulse:.6e} bit/pulse, {kr.key_bits_per_second / 1e3:.4f} kb/s\n")
    if not kr.positive:
        raise Infeasible("key rate is not positive", text)
    return text, table


def _sweep_point(ls: LoadedScenario, axis: str, x: float) -> list[str]:
    sc = ls.scenario
    system = ls.system
    null_power = None
    if axis == "power_mw":
        dbm = -math.inf if x == 0 else mw_to_dbm(x)
        sc = sc.with_channels(ch.with_power(dbm) for ch in sc.channels)
    else:
        sc = sc.with_length(x)
        ch = sc.channels[0]
        try:
            null_power = max_tolerable_power(x, ch.direction, system, sc.link, sc.mux, sc.profile,
                                             classical_index=ch.itu.index)
        except InfeasibleError:
            null_power = None
    T = sc.transmission
    xi = total_noise_budget(sc).total.value
    kr = secret_key_rate(system, T, effective_xi(ls, T, xi))
    thr = _threshold(system, T)
    row = [_g(x), _g(xi), _g(kr.key_bits_per_pulse), _g(kr.key_bits_per_second),
           str(kr.positive).lower(), "" if thr is None else _g(thr)]
    if axis == "distance_km":
        row.append("" if null_power is None else _g(null_power))
    return row


def sweep_values(cfg: dict) -> list[float]:
    sw = cfg["sweep"]
    if sw["num"] < 1:
        raise ValueError("sweep.num must be >= 1")
    if sw["num"] > 1 and sw["start"] == sw["stop"]:
        raise ValueError("sweep range is empty (start == stop)")
    if sw["num"] == 1:
        return [float(sw["start"])]
    step = (sw["stop"] - sw["start"]) / (sw["num"] - 1)
    return [sw["start"] + k * step for k in range(sw["num"])]


def cmd_sweep(ls: LoadedScenario, args) -> tuple[str, str]:
    axis = ls.config["sweep"]["axis"]
    xs = sweep_values(ls.config)
    if not ls.scenario.channels:
        raise ValueError("sweep needs at least one classical channel in the scenario")
    if axis == "power_mw" and min(xs) < 0:
        raise ValueError("power sweep values must be >= 0 mW")
    if axis == "distance_km" and min(xs) <= 0:
        raise ValueError("distance sweep values must be > 0 km")
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = list(ex.map(_sweep_point, [ls] * len(xs), [axis] * len(xs), xs))
    else:
        rows = [_sweep_point(ls, axis, x) for x in xs]
    header = ["x", "xi_total_n0", "key_bits_per_pulse", "key_bits_per_s", "positive", "threshold_n0"]
    if axis == "distance_km":
        header.append("null_key_power_mw")
    return _csv(header, rows), f"{len(rows)} sweep points over {axis}\n"


def cmd_allocate(ls: LoadedScenario, args) -> tuple[str, str]:
    req = ls.allocation_request()
    res = allocate(req)
    buf = io.StringIO()
    write_allocation_csv(req, res, buf)
    text = buf.getvalue()
    summary = (f"{res.pairs_placed} {'pairs' if req.paired else 'channels'} placed, "
               f"key rate {res.key_rate_final.key_bits_per_second / 1e3:.4f} kb/s\n")
    if res.status != "ok" or not res.feasible:
        raise Infeasible("no positive key rate even without classical channels", text)
    return text, summary


def cmd_simulate(ls: LoadedScenario, args) -> tuple[str, str]:
    sim = ls.config["simulation"]
    if sim["n_seeds"] < 1:
        raise ValueError("simulation.n_seeds must be >= 1")
    cfg = ls.acquisition()
    system, T = ls.system, ls.scenario.transmission
    rows = []
    for k in range(sim["n_seeds"]):
        c = replace(cfg, seed=(cfg.seed + k) % 2 ** 64)
        session = simulate_homodyne_session(system, T, sim["xi_true"], c, sim["method"])
        est = estimate_T_xi(session, system)
        if k == 0 and args.dump:
            write_block_dump(session, args.dump)
        rows.append([c.seed, _g(est.t_hat), _g(est.xi_hat), _g(est.xi_hat_at_bob), _g(est.std_xi),
                     _g(est.n0_hat), est.n_used, str(est.t_flagged).lower()])
    text = _csv(["seed", "t_hat", "xi_hat_n0", "xi_hat_at_bob_n0", "std_xi_n0", "n0_hat",
                 "n_signal", "t_flagged"], rows)
    return text, f"{len(rows)} seeds simulated\n"


def cmd_fit_raman(ls: LoadedScenario, args) -> tuple[str, str]:
    fit = ls.config["fit"]
    if not fit["measurements"]:
        raise ValueError("fit.measurements is not set")
    p = Path(fit["measurements"])
    path = p if p.is_absolute() else ls.base_dir / p
    meas = read_raman_measurements(path)
    profile = fit_raman_coefficient(meas, fit["band_nm"], ls.scenario.link.alpha_db_per_km,
                                    ls.system.quantum_channel.wavelength_nm, 1.0)
    rows = [[f"{pump:.2f}", f"{q:.2f}", f"{b:.6e}"] for pump, q, b in profile.entries]
    text = _csv(["pump_nm", "quantum_nm", "beta_per_km_nm"], rows)
    return text, f"fitted {len(rows)} pump wavelengths\n"


PLOT_COLUMNS = {
    "budget": ("source", "value_n0"),
    "keyrate": ("distance_km", "key_bits_per_s"),
    "sweep": ("x", "xi_total_n0"),
    "allocate": ("itu_index", "cumulative_xi_n0"),
    "simulate": ("seed", "xi_hat_at_bob_n0"),
    "fit-raman": ("pump_nm", "beta_per_km_nm"),
}

PLOT_TEMPLATE = '''"""Plot {csv} produced by `qkd-coexist {command}`; needs pandas and matplotlib."""
import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv("{csv}", comment="#")
ax = df.plot(x="{x}", y="{y}", marker="o", legend=False)
ax.set_xlabel("{x}")
ax.set_ylabel("{y}")
plt.tight_layout()
plt.savefig("{png}")
'''


def cmd_plot_stub(args) -> str:
    x, y = PLOT_COLUMNS[args.target]
    csv_name = args.csv or f"{args.target}.csv"
    return PLOT_TEMPLATE.format(csv=csv_name, command=args.target, x=x, y=y,
                                png=Path(csv_name).with_suffix(".png").name)


COMMANDS = {
    "budget": cmd_budget,
    "keyrate": cmd_keyrate,
    "sweep": cmd_sweep,
    "allocate": cmd_allocate,
    "simulate": cmd_simulate,
    "fit-raman": cmd_fit_raman,
}


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qkd-coexist",
                                description="CV-QKD / DWDM coexistence noise and key-rate tools")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scenario", help="scenario TOML file (defaults only if omitted)")
        s.add_argument("--out", help="output CSV path (stdout if omitted)")
        s.add_argument("--seed", type=_u64, help="override the scenario seed")
        s.add_argument("--format", choices=("csv", "table"), default="csv")
        if name == "sweep":
            s.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "simulate":
            s.add_argument("--dump", help="per-block CSV of the first seed")
    s = sub.add_parser("plot-stub", help="print a matplotlib script for a command's CSV")
    s.add_argument("target", choices=sorted(PLOT_COLUMNS))
    s.add_argument("--csv", help="CSV file name used in the script")
    s.add_argument("--out", help="script path (stdout if omitted)")
    return p


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "plot-stub":
        _emit(cmd_plot_stub(args), args.out)
        return EXIT_OK
    try:
        ls = load_scenario(args.scenario)
        if args.seed is not None:
            ls = replace(ls, config={**ls.config, "seed": args.seed})
        text, table = COMMANDS[args.command](ls, args)
    except Infeasible as exc:
        _emit(metadata(args.command, ls) + exc.text, args.out)
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.format == "table":
        _emit(table, args.out)
        return EXIT_OK
    _emit(metadata(args.command, ls) + text, args.out)
    if args.out:
        sys.stdout.write(table)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
