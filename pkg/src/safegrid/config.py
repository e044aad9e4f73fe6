"""Scenario configuration: YAML schema, defaults, overrides and validation.

Config files are YAML with the sections ``graph``, ``network``, ``droop``,
``references``, ``gains``, ``safety``, ``compensator``, ``attacks`` and
``simulation``. Any key left out takes the value from :data:`DEFAULTS`
(the four-DG test system). DG and bus numbers are 1-based in files and
0-based everywhere in code.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .attacks import AttackProfile, derivative_sup
from .cbf import SafetySpec
from .compensator import CompensatorState
from .consensus import ConsensusGains, LeaderRefs
from .graph import CommGraph, build_matrices, has_path_from_leader
from .plant import (
    DroopParams,
    ElectricalNetwork,
    LineSpec,
    LoadSpec,
    NetworkError,
    build_admittance,
    coupling_admittance,
)

TWO_PI = 2.0 * math.pi

DEFAULTS: dict[str, Any] = {
    "name": "unnamed",
    "graph": {
        "adjacency": [[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]],
        "pinning": [1, 0, 0, 0],
    },
    "network": {
        "nominal_frequency_hz": 60.0,
        "dg_buses": [1, 2, 3, 4],
        "coupling": {"resistance": 0.03, "inductance": 0.35e-3},
        "lines": [
            {"from": 1, "to": 2, "resistance": 0.23, "inductance": 318e-6},
            {"from": 2, "to": 3, "resistance": 0.35, "inductance": 847e-6},
            {"from": 3, "to": 4, "resistance": 0.23, "inductance": 318e-6},
        ],
        "loads": [
            {"bus": 1, "resistance": 3.0, "inductance": 6.4e-3},
            {"bus": 3, "resistance": 3.0, "inductance": 12.8e-3},
        ],
    },
    "droop": {
        "m_p": [9.4e-5, 9.4e-5, 18.8e-5, 18.8e-5],
        "n_q": [1.3e-3, 1.3e-3, 2.6e-3, 2.6e-3],
        "omega_c": 31.4,
    },
    "references": {"frequency_hz": 60.0, "voltage": 340.0},
    "gains": {
        "c_f": 20.0,
        "c_v": 10.0,
        "nu_f": 350.0,
        "nu_v": 20.0,
        "alpha_f": 0.01,
        "alpha_v": 0.01,
        "gamma": 2,
        "upsilon0": 0.01,
    },
    "safety": {
        "enabled": True,
        "frequency_band_hz": [2.0, 2.0],
        "voltage_band": [34.0, 34.0],
        "eta1": 10.0,
        "eta2": 10.0,
        "d_s": 1.0e4,
        "d_s_v": 1.0e4,
    },
    "compensator": {"enabled": True},
    "attacks": [],
    "simulation": {
        "horizon": 15.0,
        "step": 1.0e-5,
        "log_step": 1.0e-3,
        "initial_state": "primary",
        "zoh_period": None,
    },
}

# Short names accepted by ``with_override`` / ``sweep --param``.
ALIASES = {
    "c_f": "gains.c_f",
    "c_v": "gains.c_v",
    "nu_f": "gains.nu_f",
    "nu_v": "gains.nu_v",
    "alpha_f": "gains.alpha_f",
    "alpha_v": "gains.alpha_v",
    "gamma": "gains.gamma",
    "eta1": "safety.eta1",
    "eta2": "safety.eta2",
    "d_s": "safety.d_s",
    "d_s_v": "safety.d_s_v",
    "safety_enabled": "safety.enabled",
    "compensator_enabled": "compensator.enabled",
    "horizon": "simulation.horizon",
    "step": "simulation.step",
    "log_step": "simulation.log_step",
}

INITIAL_STATES = ("flat", "primary", "equilibrium")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Finding:
    level: str  # "error" | "warning"
    code: str
    message: str

    def __str__(self):
        return f"{self.level.upper()} [{self.code}] {self.message}"


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _floats(v, n: int | None = None, name: str = "") -> tuple[float, ...]:
    if isinstance(v, (list, tuple)):
        vals = tuple(float(x) for x in v)
    else:
        vals = (float(v),) if n is None else (float(v),) * n
    if n is not None and len(vals) != n:
        raise ConfigError(f"{name}: expected {n} values, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed scenario. Values are stored as read; domain objects are built on demand."""

    name: str
    adjacency: tuple[tuple[float, ...], ...]
    pinning: tuple[float, ...]
    nominal_frequency_hz: float
    dg_buses: tuple[int, ...]
    coupling_resistance: float
    coupling_inductance: float
    lines: tuple[LineSpec, ...]
    loads: tuple[LoadSpec, ...]
    m_p: tuple[float, ...]
    n_q: tuple[float, ...]
    omega_c: float
    f_ref_hz: float
    v_ref: float
    c_f: float
    c_v: float
    nu_f: tuple[float, ...]
    nu_v: tuple[float, ...]
    alpha_f: tuple[float, ...]
    alpha_v: tuple[float, ...]
    gamma: int
    upsilon0: float
    safety_enabled: bool
    band_f_hz: tuple[float, float]
    band_v: tuple[float, float]
    eta1: float
    eta2: float
    d_s: float
    d_s_v: float
    compensator_enabled: bool
    attacks: tuple[AttackProfile, ...]
    horizon: float
    step: float
    log_step: float
    initial_state: str
    zoh_period: float | None
    raw: dict = field(repr=False, compare=False, hash=False)

    @property
    def n(self) -> int:
        return len(self.pinning)

    @property
    def omega0(self) -> float:
        return TWO_PI * self.nominal_frequency_hz

    # domain objects ---------------------------------------------------
    def comm_graph(self) -> CommGraph:
        return CommGraph(np.array(self.adjacency, dtype=float), np.array(self.pinning, dtype=float))

    def network(self) -> ElectricalNetwork:
        n_bus = max([b for ln in self.lines for b in (ln.from_bus, ln.to_bus)] + list(self.dg_buses)) + 1
        coupling = coupling_admittance(self.coupling_resistance, self.coupling_inductance, self.omega0, self.n)
        return build_admittance(self.lines, self.loads, self.omega0, n_bus=n_bus, dg_buses=self.dg_buses, coupling=coupling)

    def droop(self) -> tuple[DroopParams, ...]:
        return tuple(DroopParams(mp, nq, self.omega_c) for mp, nq in zip(self.m_p, self.n_q))

    def refs(self) -> LeaderRefs:
        return LeaderRefs(TWO_PI * self.f_ref_hz, self.v_ref)

    def gains(self) -> ConsensusGains:
        return ConsensusGains(self.c_f, self.c_v)

    def safety_spec(self) -> SafetySpec:
        return SafetySpec(
            omega_l=TWO_PI * self.band_f_hz[0],
            omega_h=TWO_PI * self.band_f_hz[1],
            v_l=self.band_v[0],
            v_h=self.band_v[1],
            eta1=self.eta1,
            eta2=self.eta2,
            d_s=self.d_s,
            d_s_v=self.d_s_v,
        )

    def compensator_states(self) -> tuple[CompensatorState, CompensatorState]:
        f = CompensatorState.initial(self.n, self.gamma, self.nu_f, self.alpha_f, self.upsilon0)
        v = CompensatorState.initial(self.n, self.gamma, self.nu_v, self.alpha_v, self.upsilon0)
        return f, v

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        d = _merge(DEFAULTS, data or {})
        try:
            return cls._parse(d)
        except (TypeError, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid scenario config: {exc}") from exc

    @classmethod
    def _parse(cls, d: dict) -> "ScenarioConfig":
        g = d["graph"]
        adjacency = tuple(tuple(float(x) for x in row) for row in g["adjacency"])
        pinning = _floats(g["pinning"])
        n = len(pinning)
        if len(adjacency) != n or any(len(r) != n for r in adjacency):
            raise ConfigError(f"graph.adjacency must be {n}x{n} to match graph.pinning")
        net = d["network"]
        lines = tuple(
            LineSpec(int(ln["from"]) - 1, int(ln["to"]) - 1, float(ln["resistance"]), float(ln["inductance"]))
            for ln in net["lines"]
        )
        loads = tuple(
            LoadSpec(int(ld["bus"]) - 1, float(ld["resistance"]), float(ld["inductance"])) for ld in net["loads"]
        )
        dg_buses = tuple(int(b) - 1 for b in net["dg_buses"])
        if len(dg_buses) != n:
            raise ConfigError(f"network.dg_buses lists {len(dg_buses)} buses for {n} DGs")
        coupling = net.get("coupling") or {"resistance": 0.0, "inductance": 0.0}
        dr, gn, sf, sim = d["droop"], d["gains"], d["safety"], d["simulation"]
        attacks = []
        for a in d["attacks"] or []:
            attacks.append(
                AttackProfile(
                    channel=str(a["channel"]),
                    dg=int(a["dg"]) - 1,
                    coefficients=_floats(a["coefficients"]),
                    onset=float(a.get("onset", 0.0)),
                )
            )
        init = str(sim["initial_state"])
        if init not in INITIAL_STATES:
            raise ConfigError(f"simulation.initial_state must be one of {INITIAL_STATES}")
        zoh = sim.get("zoh_period")
        return cls(
            name=str(d["name"]),
            adjacency=adjacency,
            pinning=pinning,
            nominal_frequency_hz=float(net["nominal_frequency_hz"]),
            dg_buses=dg_buses,
            coupling_resistance=float(coupling["resistance"]),
            coupling_inductance=float(coupling["inductance"]),
            lines=lines,
            loads=loads,
            m_p=_floats(dr["m_p"], n, "droop.m_p"),
            n_q=_floats(dr["n_q"], n, "droop.n_q"),
            omega_c=float(dr["omega_c"]),
            f_ref_hz=float(d["references"]["frequency_hz"]),
            v_ref=float(d["references"]["voltage"]),
            c_f=float(gn["c_f"]),
            c_v=float(gn["c_v"]),
            nu_f=_floats(gn["nu_f"], n, "gains.nu_f"),
            nu_v=_floats(gn["nu_v"], n, "gains.nu_v"),
            alpha_f=_floats(gn["alpha_f"], n, "gains.alpha_f"),
            alpha_v=_floats(gn["alpha_v"], n, "gains.alpha_v"),
            gamma=int(gn["gamma"]),
            upsilon0=float(gn["upsilon0"]),
            safety_enabled=bool(sf["enabled"]),
            band_f_hz=_floats(sf["frequency_band_hz"], 2, "safety.frequency_band_hz"),
            band_v=_floats(sf["voltage_band"], 2, "safety.voltage_band"),
            eta1=float(sf["eta1"]),
            eta2=float(sf["eta2"]),
            d_s=float(sf["d_s"]),
            d_s_v=float(sf["d_s_v"]),
            compensator_enabled=bool(d["compensator"]["enabled"]),
            attacks=tuple(attacks),
            horizon=float(sim["horizon"]),
            step=float(sim["step"]),
            log_step=float(sim["log_step"]),
            initial_state=init,
            zoh_period=None if zoh is None else float(zoh),
            raw=d,
        )

    def with_override(self, path: str, value: Any) -> "ScenarioConfig":
        """Copy with one dotted-path key replaced (aliases such as ``nu_f`` allowed)."""
        path = ALIASES.get(path, path)
        d = self.to_dict()
        node = d
        keys = path.split(".")
        for k in keys[:-1]:
            if k not in node or not isinstance(node[k], dict):
                raise ConfigError(f"unknown config path {path!r}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config path {path!r}")
        node[keys[-1]] = value
        return ScenarioConfig.from_dict(d)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ScenarioConfig.from_dict(data or {})


def bundled_path(name: str) -> Path:
    """Path of a shipped scenario (``case1`` or ``case2``)."""
    ref = resources.files("safegrid") / "scenarios" / f"{name}.yaml"
    return Path(str(ref))


def load_bundled(name: str) -> ScenarioConfig:
    return load_config(bundled_path(name))


def _on_grid(value: float, step: float) -> bool:
    k = round(value / step)
    return abs(k * step - value) <= 1e-9 * max(1.0, abs(value))


def validate(cfg: ScenarioConfig) -> list[Finding]:
    """Check modelling assumptions and numeric settings. Errors block a run."""
    out: list[Finding] = []

    def err(code, msg):
        out.append(Finding("error", code, msg))

    def warn(code, msg):
        out.append(Finding("warning", code, msg))

    adj = np.array(cfg.adjacency)
    pin = np.array(cfg.pinning)
    if np.any(adj < 0) or np.any(pin < 0) or np.any(np.diag(adj) != 0):
        err("graph", "adjacency/pinning must be non-negative with a zero diagonal")
    elif not np.any(pin > 0):
        err("assumption2", "Assumption 2 violated: no follower is pinned to the leader")
    else:
        g = cfg.comm_graph()
        if not has_path_from_leader(g):
            err("assumption2", "Assumption 2 violated: some inverter has no directed path from the leader")
        elif abs(np.linalg.det(build_matrices(g).lg)) < 1e-12:
            err("assumption2", "L_G is singular")

    positive = {
        "c_f": cfg.c_f,
        "c_v": cfg.c_v,
        "omega_c": cfg.omega_c,
        "upsilon0": cfg.upsilon0,
        "eta1": cfg.eta1,
        "eta2": cfg.eta2,
        "d_s": cfg.d_s,
        "d_s_v": cfg.d_s_v,
        "v_ref": cfg.v_ref,
        "f_ref_hz": cfg.f_ref_hz,
    }
    for k, v in positive.items():
        if not v > 0:
            err("gain", f"{k} must be positive (got {v})")
    for k in ("nu_f", "nu_v", "m_p", "n_q"):
        vals = getattr(cfg, k)
        if not all(v > 0 for v in vals):
            err("gain", f"{k} must be positive (got {list(vals)})")
    for k in ("alpha_f", "alpha_v"):
        if not all(v > 0 for v in getattr(cfg, k)):
            err("gain", f"{k} must be positive so that eta(t) decays")
    if not all(b > 0 for b in cfg.band_f_hz + cfg.band_v):
        err("gain", "safety bands must be positive on both sides")
    if cfg.gamma < 1:
        err("gain", f"gamma must be >= 1 (got {cfg.gamma})")

    if not cfg.step > 0:
        err("step", "simulation.step must be positive")
    elif not cfg.horizon > cfg.step:
        err("step", "simulation.horizon must exceed the step")
    else:
        if not cfg.log_step >= cfg.step or not _on_grid(cfg.log_step, cfg.step):
            err("step", "simulation.log_step must be a positive multiple of the step")
        elif not _on_grid(cfg.horizon, cfg.log_step):
            err("step", "simulation.horizon must be a multiple of log_step")
        if cfg.zoh_period is not None and not (cfg.zoh_period >= cfg.step and _on_grid(cfg.zoh_period, cfg.step)):
            err("step", "simulation.zoh_period must be a multiple of the step")

    for a in cfg.attacks:
        label = f"{a.channel} attack on DG{a.dg + 1}"
        if a.dg >= cfg.n:
            err("attack", f"{label}: only {cfg.n} DGs exist")
            continue
        if cfg.gamma >= 1 and math.isinf(derivative_sup(a, cfg.gamma)):
            err(
                "assumption1",
                f"Assumption 1: derivative order insufficient for {label} "
                f"(degree {a.degree} > gamma {cfg.gamma})",
            )
        if a.onset < 0:
            err("attack", f"{label}: onset must be >= 0")
        elif cfg.step > 0 and not _on_grid(a.onset, cfg.step):
            err("onset_grid", f"{label}: onset {a.onset} s is not on the {cfg.step} s step grid")
        if a.onset_jump != 0:
            warn("attack_jump", f"{label} jumps by {a.onset_jump:g} at onset t={a.onset:g} s")

    try:
        cfg.network()
    except NetworkError as exc:
        err("network", str(exc))

    if not any(f.level == "error" and f.code == "gain" for f in out):
        spec = cfg.safety_spec()
        for i in range(cfg.n):
            mf = cfg.m_p[i] * cfg.d_s
            mv = cfg.n_q[i] * cfg.d_s_v
            if mf >= min(spec.eta1 * spec.omega_l, spec.eta2 * spec.omega_h):
                warn("cbf_margin", f"DG{i + 1}: m_p*d_s={mf:.3g} leaves no CBF margin at the nominal frequency")
            if mv >= min(spec.eta1 * spec.v_l, spec.eta2 * spec.v_h):
                warn("cbf_margin", f"DG{i + 1}: n_q*d_s_v={mv:.3g} leaves no CBF margin at the nominal voltage")
    return out


def errors(findings: list[Finding]) -> list[Finding]:
    return [f for f in findings if f.level == "error"]
