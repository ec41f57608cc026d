"""Built-in scenarios: initial data plus the configuration defaults they need."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import State
from .fields import GridSpec, ScalarField, VectorField, minimal_image_displacement

InitialData = Callable[[GridSpec, dict, np.random.Generator], State]


@dataclass(frozen=True)
class Scenario:
    id: str
    description: str
    checks: str  # the mechanism the scenario exercises
    initial: InitialData
    defaults: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def initial_state(self, grid: GridSpec, params: dict | None = None,
                      rng: np.random.Generator | None = None) -> State:
        merged = {**self.params, **(params or {})}
        return self.initial(grid, merged, rng if rng is not None else np.random.default_rng(0))


def periodic_blob(grid: GridSpec, center, width: float) -> np.ndarray:
    """Von Mises bump exp(sum (cos(k y_i) - 1)/(k w)^2): a smooth periodic Gaussian."""
    expo = 0.0
    for x, c, L in zip(grid.coords, center, grid.side_length):
        kk = 2 * math.pi / L
        expo = expo + (np.cos(kk * (x - c)) - 1.0) / (kk * width) ** 2
    return np.exp(expo)


def _heat(grid, p, rng):
    x = grid.coords
    n0 = 1.0 + 0.5 * np.sin(x[0])
    c0 = 1.0 + 0.25 * np.cos(x[1]) + 0.1 * np.sin(x[0] + x[1])
    return State(ScalarField(grid, n0), ScalarField(grid, c0), VectorField.zeros(grid))


def _taylor_green(grid, p, rng):
    if grid.dim != 2:
        raise ValueError("taylor_green is two-dimensional")
    x, y = grid.coords
    a = p.get("amplitude", 1.0)
    u = VectorField.from_arrays(grid, [a * np.sin(x) * np.cos(y), -a * np.cos(x) * np.sin(y)])
    return State(ScalarField.zeros(grid), ScalarField.zeros(grid), u)


def _drop(grid, p, rng):
    L = grid.side_length
    center = [L[i] * p["center"][i] for i in range(grid.dim)]
    n0 = p["background"] + p["amplitude"] * periodic_blob(grid, center, p["width"])
    c0 = np.full(grid.shape, float(p["c_bar"]))
    return State(ScalarField(grid, n0), ScalarField(grid, c0), VectorField.zeros(grid))


_DROP = {"background": 0.05, "amplitude": 2.0, "width": 0.6, "c_bar": 1.0}
_DROP_MODEL = {"family": "step", "kappa1": 1.0, "c_star": 0.3, "delta": 0.1, "mu": 2.0}


def builtin_scenarios() -> list[Scenario]:
    return [
        Scenario(
            "heat_decoupled",
            "chi = k = 0, u0 = 0: two independent heat flows",
            "exact solution",
            _heat,
            defaults={"grid": {"dim": 2, "points": 64},
                      "model": {"family": "none"}, "potential": {"kind": "zero"},
                      "solver": {"dt": 1e-3, "t_end": 1.0}},
        ),
        Scenario(
            "taylor_green",
            "n0 = c0 = 0 with the decaying Taylor-Green vortex",
            "exact solution",
            _taylor_green,
            defaults={"grid": {"dim": 2, "points": 64},
                      "model": {"family": "none"}, "potential": {"kind": "zero"},
                      "solver": {"dt": 1e-3, "t_end": 0.5}},
            params={"amplitude": 1.0},
        ),
        Scenario(
            "gaussian_drop",
            "cell blob on a positive background sinking under gravity through uniform oxygen",
            "energy inequality",
            _drop,
            defaults={"grid": {"dim": 2, "points": 128}, "model": dict(_DROP_MODEL),
                      "potential": {"kind": "gravity", "amplitude": 1.0},
                      "solver": {"dt": "auto", "t_end": 1.0}},
            params={**_DROP, "center": [0.5, 0.75]},
        ),
        Scenario(
            "gaussian_drop_3d",
            "three-dimensional cell blob, run through the regularised system",
            "regularized limit",
            _drop,
            defaults={"grid": {"dim": 3, "points": 48}, "model": dict(_DROP_MODEL),
                      "potential": {"kind": "gravity", "amplitude": 1.0},
                      "solver": {"dt": "auto", "t_end": 0.25},
                      "ladder": {"k_values": [16.0, 64.0, 256.0], "eps_values": [0.2, 0.1, 0.05],
                                 "horizon": 0.25, "reference": "finest"}},
            params={**_DROP, "center": [0.5, 0.5, 0.75]},
        ),
        Scenario(
            "stress_chi",
            "gaussian_drop with the chemotactic sensitivity scaled by 50",
            "blow-up criterion",
            _drop,
            defaults={"grid": {"dim": 2, "points": 128},
                      "model": {**_DROP_MODEL, "chi_scale": 50.0},
                      "potential": {"kind": "gravity", "amplitude": 1.0},
                      "solver": {"dt": "auto", "t_end": 1.0}},
            params={**_DROP, "center": [0.5, 0.75]},
        ),
    ]


def get_scenario(scenario_id: str) -> Scenario:
    for sc in builtin_scenarios():
        if sc.id == scenario_id:
            return sc
    known = ", ".join(s.id for s in builtin_scenarios())
    raise KeyError(f"unknown scenario {scenario_id!r}; known: {known}")
