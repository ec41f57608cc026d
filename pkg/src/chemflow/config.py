"""Run configuration: YAML documents, dotted overrides, validation.

Resolution order is built-in defaults, then the scenario's defaults, then
the configuration file, then ``--override key=value`` pairs (values are
parsed as YAML scalars or lists).
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .diagnostics import DiagnosticsConfig
from .errors import ConfigError
from .fields import GridSpec
from .model import ModelFunctions, PotentialSpec, build_model, build_potential
from .scenarios import Scenario, builtin_scenarios, get_scenario
from .solver import StepConfig

MODES = ("simulate", "picard", "ladder", "audit")

DEFAULTS: dict[str, Any] = {
    "mode": "simulate",
    "seed": 0,
    "scenario": {"id": "gaussian_drop", "params": {}},
    "grid": {"dim": 2, "points": 128, "side_length": None, "dealias_fraction": 2.0 / 3.0},
    "model": {"family": "step", "kappa1": 1.0, "c_star": 0.3, "delta": 0.1, "mu": 2.0,
              "chi_perturbation": 0.0, "chi_scale": 1.0},
    "potential": {"kind": "gravity", "amplitude": 1.0, "width": 1.0},
    "solver": {"dt": "auto", "dt_max": 5e-3, "cfl_safety": 0.4, "scheme": "imex_rk2",
               "pos_tol": 1e-8, "t_end": 1.0, "steps": None, "lambda1": 1.0},
    "picard": {"horizon": 0.01, "tol": 1e-10, "max_iters": 30, "sobolev_m": 3, "dt": 1e-3,
               "sweep_doublings": 0},
    "ladder": {"k_values": [16.0, 64.0, 256.0], "eps_values": [0.2, 0.1, 0.05],
               "horizon": 0.25, "dt": 2.5e-3, "reference": "unregularized"},
    "diagnostics": {"serrin_p": 4.0, "serrin_q": 8.0, "energy_form": "auto",
                    "reference_csv": None, "stress_threshold": 10.0},
    "output": {"directory": "chemflow_out", "snapshot_stride": 0, "series_stride": 1},
}

# free-form sub-trees whose keys are not checked against DEFAULTS
_OPEN = {"scenario.params"}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _unknown_keys(tree: dict, ref: dict, prefix: str = "") -> list[str]:
    bad = []
    for k, v in tree.items():
        path = f"{prefix}{k}"
        if k not in ref:
            bad.append(f"{path}: unknown key")
        elif path in _OPEN:
            if not isinstance(v, dict):
                bad.append(f"{path}: must be a mapping")
        elif isinstance(ref[k], dict):
            if not isinstance(v, dict):
                bad.append(f"{path}: must be a mapping")
            else:
                bad.extend(_unknown_keys(v, ref[k], path + "."))
    return bad


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError([f"override {text!r}: expected key=value"])
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError([f"override {text!r}: empty key"])
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError([f"{key}: cannot parse value {raw!r} ({exc})"]) from None
    return key, value


def _set_dotted(tree: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = tree
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError([f"{key}: {p!r} is not a mapping"])
        node = nxt
    node[parts[-1]] = value


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate(values: dict) -> list[str]:
    """Every violated key with a short reason; empty when the config is valid."""
    p = _unknown_keys(values, DEFAULTS)
    if any(x.endswith("must be a mapping") for x in p):
        return p

    def need(ok: bool, key: str, why: str) -> None:
        if not ok:
            p.append(f"{key}: {why}")

    v = values
    need(v["mode"] in MODES, "mode", f"must be one of {', '.join(MODES)}")
    need(_int(v["seed"]) and v["seed"] >= 0, "seed", "must be a nonnegative integer")
    ids = [s.id for s in builtin_scenarios()]
    need(v["scenario"]["id"] in ids, "scenario.id", f"must be one of {', '.join(ids)}")

    g = v["grid"]
    need(g["dim"] in (2, 3), "grid.dim", "must be 2 or 3")
    need(_int(g["points"]) and g["points"] >= 16 and g["points"] % 2 == 0, "grid.points",
         "must be an even integer >= 16 with only factors 2, 3, 5")
    sl = g["side_length"]
    need(sl is None or (_num(sl) and sl > 0)
         or (isinstance(sl, list) and all(_num(x) and x > 0 for x in sl)),
         "grid.side_length", "must be null, a positive number, or a list of them")
    need(_num(g["dealias_fraction"]) and 0 < g["dealias_fraction"] <= 1, "grid.dealias_fraction",
         "must lie in (0, 1]")

    m = v["model"]
    need(m["family"] in ("rational", "step", "none"), "model.family", "must be rational, step or none")
    for key in ("kappa1", "c_star", "delta", "mu", "chi_scale"):
        need(_num(m[key]) and m[key] > 0, f"model.{key}", "must be positive")
    need(_num(m["chi_perturbation"]), "model.chi_perturbation", "must be a number")

    pt = v["potential"]
    need(pt["kind"] in ("zero", "gravity", "radial"), "potential.kind", "must be zero, gravity or radial")
    need(_num(pt["amplitude"]) and pt["amplitude"] >= 0, "potential.amplitude", "must be nonnegative")
    need(_num(pt["width"]) and pt["width"] > 0, "potential.width", "must be positive")

    s = v["solver"]
    need(s["dt"] == "auto" or (_num(s["dt"]) and s["dt"] > 0), "solver.dt", "must be positive or 'auto'")
    need(_num(s["dt_max"]) and s["dt_max"] > 0, "solver.dt_max", "must be positive")
    need(_num(s["cfl_safety"]) and 0 < s["cfl_safety"] <= 1, "solver.cfl_safety", "must lie in (0, 1]")
    need(s["scheme"] == "imex_rk2", "solver.scheme", "only imex_rk2 is available")
    need(_num(s["pos_tol"]) and s["pos_tol"] >= 0, "solver.pos_tol", "must be nonnegative")
    need(_num(s["t_end"]) and s["t_end"] > 0, "solver.t_end", "must be positive")
    need(s["steps"] is None or (_int(s["steps"]) and s["steps"] > 0), "solver.steps",
         "must be null or a positive integer")
    if s["steps"] is not None:
        need(s["dt"] != "auto", "solver.steps", "requires a fixed solver.dt")
    need(_num(s["lambda1"]) and s["lambda1"] > 0, "solver.lambda1", "must be positive")

    pc = v["picard"]
    need(_num(pc["horizon"]) and pc["horizon"] > 0, "picard.horizon", "must be positive")
    need(_num(pc["tol"]) and pc["tol"] >= 0, "picard.tol", "must be nonnegative")
    need(_int(pc["max_iters"]) and pc["max_iters"] >= 1, "picard.max_iters", "must be a positive integer")
    need(_int(pc["sobolev_m"]) and pc["sobolev_m"] >= 3, "picard.sobolev_m", "must be an integer >= 3")
    need(_num(pc["dt"]) and pc["dt"] > 0, "picard.dt", "must be positive")
    need(_int(pc["sweep_doublings"]) and pc["sweep_doublings"] >= 0, "picard.sweep_doublings",
         "must be a nonnegative integer")

    ld = v["ladder"]
    ks, es = ld["k_values"], ld["eps_values"]
    need(isinstance(ks, list) and ks and all(_num(x) and x > 0 for x in ks)
         and all(b > a for a, b in zip(ks, ks[1:])), "ladder.k_values",
         "must be a nonempty ascending list of positive numbers")
    need(isinstance(es, list) and es and all(_num(x) and x > 0 for x in es)
         and all(b < a for a, b in zip(es, es[1:])), "ladder.eps_values",
         "must be a nonempty descending list of positive numbers")
    if isinstance(ks, list) and isinstance(es, list):
        need(len(ks) == len(es), "ladder.eps_values", "must have as many entries as ladder.k_values")
    need(_num(ld["horizon"]) and ld["horizon"] > 0, "ladder.horizon", "must be positive")
    need(_num(ld["dt"]) and ld["dt"] > 0, "ladder.dt", "must be positive")
    need(ld["reference"] in ("unregularized", "finest"), "ladder.reference",
         "must be unregularized or finest")

    d = v["diagnostics"]
    ok_pair = _num(d["serrin_p"]) and _num(d["serrin_q"]) and d["serrin_p"] > 3 and d["serrin_q"] > 0
    need(ok_pair and abs(3 / d["serrin_p"] + 2 / d["serrin_q"] - 1) <= 1e-12,
         "diagnostics.serrin_p", "(p, q) must satisfy 3/p + 2/q = 1 with p > 3")
    need(d["energy_form"] in ("auto", "2d", "3d"), "diagnostics.energy_form", "must be auto, 2d or 3d")
    need(d["reference_csv"] is None or isinstance(d["reference_csv"], str), "diagnostics.reference_csv",
         "must be null or a path")
    need(_num(d["stress_threshold"]) and d["stress_threshold"] > 0, "diagnostics.stress_threshold",
         "must be positive")

    o = v["output"]
    need(isinstance(o["directory"], str) and o["directory"], "output.directory", "must be a path")
    need(_int(o["snapshot_stride"]) and o["snapshot_stride"] >= 0, "output.snapshot_stride",
         "must be a nonnegative integer")
    need(_int(o["series_stride"]) and o["series_stride"] >= 1, "output.series_stride",
         "must be a positive integer")

    if not any(x.startswith("grid.") for x in p):
        try:
            grid_from(v)
        except ValueError as exc:
            p.append(f"grid.points: {exc}")
    return p


def grid_from(values: dict) -> GridSpec:
    g = values["grid"]
    sl = g["side_length"]
    return GridSpec(g["dim"], g["points"], tuple(sl) if isinstance(sl, list) else sl,
                    g["dealias_fraction"])


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, dotted: str) -> Any:
        node = self.values
        for part in dotted.split("."):
            node = node[part]
        return node

    @property
    def mode(self) -> str:
        return self.values["mode"]

    @property
    def scenario(self) -> Scenario:
        return get_scenario(self["scenario.id"])

    @property
    def output_dir(self) -> Path:
        return Path(self["output.directory"])

    def grid(self) -> GridSpec:
        return grid_from(self.values)

    def model(self) -> ModelFunctions:
        m = self.values["model"]
        mf = build_model(m["family"], m["kappa1"], m["c_star"], m["delta"], m["mu"],
                         m["chi_perturbation"])
        return mf.scaled_chi(m["chi_scale"]) if m["chi_scale"] != 1.0 else mf

    def potential(self, grid: GridSpec) -> PotentialSpec:
        p = self.values["potential"]
        return build_potential(grid, p["kind"], p["amplitude"], p["width"])

    def step_config(self) -> StepConfig:
        s = self.values["solver"]
        return StepConfig(dt=s["dt"], cfl_safety=s["cfl_safety"], scheme=s["scheme"],
                          pos_tol=s["pos_tol"], dt_max=s["dt_max"])

    def diagnostics_config(self) -> DiagnosticsConfig:
        d = self.values["diagnostics"]
        return DiagnosticsConfig(lambda1=self["solver.lambda1"], sobolev_m=self["picard.sobolev_m"],
                                 serrin_p=d["serrin_p"], serrin_q=d["serrin_q"],
                                 energy_form=d["energy_form"])

    @property
    def t_end(self) -> float:
        s = self.values["solver"]
        return s["steps"] * s["dt"] if s["steps"] is not None else s["t_end"]


def resolve(user: dict, overrides: list[str] | tuple[str, ...] = ()) -> RunConfig:
    """Merge defaults, scenario defaults, ``user`` and overrides; validate the result."""
    if not isinstance(user, dict):
        raise ConfigError(["config: top level must be a mapping"])
    user = copy.deepcopy(user)
    for item in overrides:
        key, value = parse_override(item)
        _set_dotted(user, key, value)
    sid = user.get("scenario", {}).get("id", DEFAULTS["scenario"]["id"]) \
        if isinstance(user.get("scenario", {}), dict) else None
    base = DEFAULTS
    try:
        base = _merge(DEFAULTS, get_scenario(sid).defaults)
    except (KeyError, TypeError):
        pass  # reported by validate
    values = _merge(base, user)
    problems = validate(values)
    if problems:
        raise ConfigError(problems)
    return RunConfig(values)


def load_config(path: str | Path | None, overrides=(), *, mode: str | None = None,
                output: str | Path | None = None) -> RunConfig:
    user: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError([f"config: cannot read {path} ({exc.strerror})"]) from None
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError([f"config: invalid YAML ({exc})"]) from None
    if mode is not None:
        user["mode"] = mode
    if output is not None:
        user.setdefault("output", {})
        if isinstance(user["output"], dict):
            user["output"]["directory"] = str(output)
    return resolve(user, overrides)
