"""Scenario files: TOML overlays on a single defaults table, with strict key checking."""

from __future__ import annotations

import copy
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .allocator import AllocationRequest, Objective, default_candidates
from .estimation import AcquisitionConfig, DriftModel, Schedule
from .keyrate import CvqkdSystem
from .noise import (
    Direction,
    Modulation,
    MuxSpec,
    Overlap,
    RamanProfile,
    Scenario,
    WdmChannel,
    bundled_profile,
)
from .units import FiberLink, Reference, ShotNoise, itu_channel

DEFAULTS_PATH = Path(__file__).with_name("data") / "defaults.toml"
DEFAULTS_ENV = "QKD_COEXIST_DEFAULTS"

CHANNEL_KEYS = {"index": int, "direction": str, "power_dbm": float, "modulation": str,
                "ook_rate_hz": float}


class ScenarioError(ValueError):
    """Invalid scenario file; the message carries file, line and key context."""


def _line_of(text: str, section: str | None, key: str) -> int | None:
    in_section = section is None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("["):
            name = s.strip("[]").strip()
            in_section = name == section
            continue
        if in_section and re.match(rf"{re.escape(key)}\s*=", s):
            return n
    return None


def _where(source: str, text: str, section: str | None, key: str) -> str:
    line = _line_of(text, section, key) if text else None
    dotted = f"{section}.{key}" if section else key
    return f"{source}:{line}: {dotted}" if line else f"{source}: {dotted}"


def load_defaults() -> dict:
    with open(DEFAULTS_PATH, "rb") as fh:
        base = tomllib.load(fh)
    alt = os.environ.get(DEFAULTS_ENV)
    if alt:
        text = Path(alt).read_text()
        try:
            override = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"{alt}: {exc}") from None
        base = merge(base, override, alt, text)
    return base


def _coerce(value: Any, default: Any, where: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ScenarioError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{where}: expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ScenarioError(f"{where}: expected an integer, got {value!r}")
            return int(value)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ScenarioError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ScenarioError(f"{where}: expected a list, got {value!r}")
        return value
    return value


def merge(base: dict, override: dict, source: str, text: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key == "channels":
            out["channels"] = _channels(value, source, text)
            continue
        if key not in base:
            raise ScenarioError(f"{_where(source, text, None, key)}: unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ScenarioError(f"{_where(source, text, None, key)}: expected a table")
            for k, v in value.items():
                if k not in base[key]:
                    raise ScenarioError(f"{_where(source, text, key, k)}: unknown key")
                out[key][k] = _coerce(v, base[key][k], _where(source, text, key, k))
        else:
            out[key] = _coerce(value, base[key], _where(source, text, None, key))
    return out


def _channels(value: Any, source: str, text: str) -> list[dict]:
    if not isinstance(value, list):
        raise ScenarioError(f"{source}: channels must be an array of tables ([[channels]])")
    out = []
    for n, ch in enumerate(value):
        where = f"{source}: channels[{n}]"
        if not isinstance(ch, dict):
            raise ScenarioError(f"{where}: expected a table")
        unknown = set(ch) - set(CHANNEL_KEYS)
        if unknown:
            raise ScenarioError(f"{where}: unknown key(s) {sorted(unknown)}")
        if "index" not in ch:
            raise ScenarioError(f"{where}: missing index")
        resolved = {"index": ch["index"], "direction": ch.get("direction", "forward"),
                    "power_dbm": float(ch.get("power_dbm", 0.0)),
                    "modulation": ch.get("modulation", "continuous")}
        if "ook_rate_hz" in ch:
            resolved["ook_rate_hz"] = float(ch["ook_rate_hz"])
        if not isinstance(resolved["index"], int) or isinstance(resolved["index"], bool):
            raise ScenarioError(f"{where}.index: expected an integer")
        if resolved["direction"] not in ("forward", "backward"):
            raise ScenarioError(f"{where}.direction: expected forward or backward")
        if resolved["modulation"] not in ("continuous", "ook"):
            raise ScenarioError(f"{where}.modulation: expected continuous or ook")
        out.append(resolved)
    return out


@dataclass(frozen=True)
class LoadedScenario:
    """Resolved configuration plus the typed objects built from it."""

    config: dict
    scenario: Scenario
    base_dir: Path

    @property
    def system(self) -> CvqkdSystem:
        return self.scenario.system

    def acquisition(self) -> AcquisitionConfig:
        sim = self.config["simulation"]
        drift = (DriftModel.none() if sim["drift"] == "none"
                 else DriftModel("random_walk", sim["drift_step"]))
        return AcquisitionConfig(sim["n_total_pulses"], sim["block_pulses"], Schedule(sim["schedule"]),
                                 drift, self.config["seed"])

    def allocation_request(self) -> AllocationRequest:
        a = self.config["allocation"]
        q = self.system.quantum_channel
        cands = tuple(a["candidates"]) or default_candidates(q)
        return AllocationRequest(
            quantum=q, candidate_indices=cands, forward_dbm=a["forward_dbm"],
            backward_dbm=a["backward_dbm"], link=self.scenario.link, system=self.system,
            mux=self.scenario.mux, profile=self.scenario.profile, objective=Objective(a["objective"]),
            fixed_pairs=None if a["fixed_pairs"] < 0 else a["fixed_pairs"], paired=a["paired"],
            base=self.scenario)


def resolve(text: str, source: str = "<scenario>", base_dir: Path | None = None) -> dict:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    defaults = load_defaults()
    defaults.setdefault("channels", [])
    return merge(defaults, raw, source, text)


def build(config: dict, base_dir: Path, source: str = "<scenario>") -> LoadedScenario:
    try:
        s, l, m, nz = config["system"], config["link"], config["mux"], config["noise"]
        system = CvqkdSystem(
            v_a=s["v_a"], clock_hz=s["clock_hz"], lo_photons=s["lo_photons"], pulse_ns=s["pulse_ns"],
            eta_B=s["eta_B"], v_el=s["v_el"], beta_rec=s["beta_rec"],
            xi_system=ShotNoise(s["xi_system"], Reference.AT_ALICE),
            quantum_channel=itu_channel(s["quantum_channel"]), signal_fraction=s["signal_fraction"])
        link = FiberLink(l["length_km"], l["alpha_db_per_km"], l["n2_m2_per_mw"], l["a_eff_um2"],
                         l["dispersion_ps_nm_km"])
        mux = MuxSpec(**m)
        channels = tuple(
            WdmChannel(itu_channel(c["index"]), Direction(c["direction"]), c["power_dbm"],
                       Modulation(c["modulation"]), c.get("ook_rate_hz"))
            for c in config.get("channels", []))
        if config["raman_profile"]:
            p = Path(config["raman_profile"])
            profile = RamanProfile.from_csv(p if p.is_absolute() else base_dir / p)
        else:
            profile = bundled_profile()
        sc = Scenario(system, link, channels, mux, profile, nz["amplifier_gain"], nz["n_sp"],
                      nz["sideband_suppression_db"], Overlap(nz["xpm_overlap"]),
                      frozenset(nz["disabled"]))
        sc.validate()
        for key, allowed in (("sweep.axis", ("power_mw", "distance_km")),
                             ("allocation.objective", ("min_noise", "max_noise")),
                             ("simulation.schedule", ("alternating", "sequential")),
                             ("simulation.drift", ("none", "random_walk")),
                             ("simulation.method", ("auto", "pulses", "stats"))):
            sec, k = key.split(".")
            if config[sec][k] not in allowed:
                raise ScenarioError(f"{source}: {key} must be one of {allowed}")
    except ScenarioError:
        raise
    except (ValueError, OSError) as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    return LoadedScenario(config, sc, base_dir)


def load_scenario(path: str | Path | None) -> LoadedScenario:
    if path is None:
        return build(resolve("", "<defaults>"), Path.cwd(), "<defaults>")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    return build(resolve(text, str(path), path.parent), path.parent, str(path))
