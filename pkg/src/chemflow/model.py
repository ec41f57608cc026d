"""Consumption rate k(c), chemotactic sensitivity chi(c), and the potential phi."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .fields import GridSpec, ScalarField, VectorField, gradient, laplacian, minimal_image_displacement

ScalarFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelFunctions:
    chi: ScalarFn
    k: ScalarFn
    chi_prime: ScalarFn
    k_prime: ScalarFn
    mu: float
    family: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    def scaled_chi(self, factor: float) -> "ModelFunctions":
        """Same family with chi (and mu) multiplied by ``factor``."""
        family = {**self.family, "chi_scale": self.family.get("chi_scale", 1.0) * factor}
        if self.family.get("name") in ("rational", "step") and "chi_perturbation" not in self.family:
            # rebuild as mu' * k so that chi - mu' k stays exactly zero
            return _proportional(self.k, self.k_prime, self.mu * factor, family)
        chi, chi_p = self.chi, self.chi_prime
        return ModelFunctions(
            chi=lambda c: factor * chi(c),
            k=self.k,
            chi_prime=lambda c: factor * chi_p(c),
            k_prime=self.k_prime,
            mu=self.mu * factor,
            family=family,
        )


def _proportional(k: ScalarFn, k_prime: ScalarFn, mu: float, family: dict,
                  perturbation: float = 0.0, bump_center: float = 0.5,
                  bump_width: float = 0.1) -> ModelFunctions:
    if perturbation == 0.0:
        chi = lambda c: mu * k(c)
        chi_p = lambda c: mu * k_prime(c)
    else:
        def bump(c):
            return np.exp(-(((np.asarray(c, dtype=float) - bump_center) / bump_width) ** 2))

        def chi(c):
            return mu * k(c) + perturbation * bump(c)

        def chi_p(c):
            z = (np.asarray(c, dtype=float) - bump_center) / bump_width
            return mu * k_prime(c) - perturbation * 2.0 * z / bump_width * bump(c)
        family = {**family, "chi_perturbation": perturbation,
                  "bump_center": bump_center, "bump_width": bump_width}
    return ModelFunctions(chi=chi, k=k, chi_prime=chi_p, k_prime=k_prime, mu=mu, family=family)


def make_rational_family(kappa1: float, c_star: float, mu: float, **perturb) -> ModelFunctions:
    """k(c) = kappa1 c / (c + c_star), chi = mu k."""
    if not (kappa1 > 0 and c_star > 0 and mu > 0):
        raise ValueError("kappa1, c_star and mu must be positive")

    def k(c):
        c = np.asarray(c, dtype=float)
        return kappa1 * c / (c + c_star)

    def k_prime(c):
        c = np.asarray(c, dtype=float)
        return kappa1 * c_star / (c + c_star) ** 2

    tag = {"name": "rational", "kappa1": kappa1, "c_star": c_star, "mu": mu}
    return _proportional(k, k_prime, mu, tag, **perturb)


def make_step_family(kappa1: float, c_star: float, delta: float, mu: float, **perturb) -> ModelFunctions:
    """Logistic smoothing of kappa1 * theta(c - c_star), shifted so that k(0) = 0."""
    if delta <= 0:
        raise ValueError(f"smoothing width delta must be positive, got {delta}")
    if not (kappa1 > 0 and c_star > 0 and mu > 0):
        raise ValueError("kappa1, c_star and mu must be positive")
    s0 = float(expit(-c_star / delta))
    norm = kappa1 / (1.0 - s0)

    def k(c):
        c = np.asarray(c, dtype=float)
        return norm * (expit((c - c_star) / delta) - s0)

    def k_prime(c):
        s = expit((np.asarray(c, dtype=float) - c_star) / delta)
        return norm * s * (1.0 - s) / delta

    tag = {"name": "step", "kappa1": kappa1, "c_star": c_star, "delta": delta, "mu": mu}
    return _proportional(k, k_prime, mu, tag, **perturb)


def make_null_family(mu: float = 1.0) -> ModelFunctions:
    """chi = k = 0: the cell and oxygen equations decouple into heat flows."""
    zero = lambda c: np.zeros_like(np.asarray(c, dtype=float))
    return ModelFunctions(chi=zero, k=zero, chi_prime=zero, k_prime=zero, mu=mu,
                          family={"name": "none", "mu": mu})


@dataclass(frozen=True)
class AssumptionReport:
    A_deviation: float
    AA_holds: bool
    B_violations: list
    k_zero_at_origin: bool


def validate_assumptions(mf: ModelFunctions, c_max: float, samples: int = 256,
                         tol: float = 1e-12) -> AssumptionReport:
    """Sample chi, k and their derivatives on [0, c_max] against (A), (B), (AA), k(0)=0."""
    if not c_max > 0:
        raise ValueError("c_max must be positive")
    if samples < 256:
        raise ValueError("at least 256 samples are required")
    c = np.linspace(0.0, c_max, samples)
    dev = np.abs(mf.chi(c) - mf.mu * mf.k(c))
    i = int(np.argmax(dev))
    sup = float(dev[i])
    if sup > 0:
        # polish the sampled supremum inside the bracketing cells
        lo, hi = c[max(i - 1, 0)], c[min(i + 1, samples - 1)]
        res = minimize_scalar(lambda x: -abs(float(mf.chi(x) - mf.mu * mf.k(x))),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        sup = max(sup, -float(res.fun))
    scale = 1.0 + float(np.max(np.abs(mf.chi(c))))
    aa = sup <= 4 * np.finfo(float).eps * scale
    if aa:
        sup = 0.0
    bad = (mf.chi(c) < -tol) | (mf.k(c) < -tol) | (mf.chi_prime(c) < -tol) | (mf.k_prime(c) < -tol)
    k0 = float(mf.k(np.array(0.0)))
    return AssumptionReport(
        A_deviation=sup,
        AA_holds=bool(aa),
        B_violations=[float(x) for x in c[bad]],
        k_zero_at_origin=k0 == 0.0,
    )


def cancellation_field(mf: ModelFunctions, c: ScalarField) -> ScalarField:
    """chi(c) - mu k(c) evaluated pointwise; identically zero under (AA)."""
    return c.map(lambda v: mf.chi(v) - mf.mu * mf.k(v))


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    phi: ScalarField
    grad_phi: VectorField
    laplacian_phi: ScalarField
    sup_bounds: tuple[float, float, float]
    kind: str = "custom"

    def __post_init__(self):
        if self.phi.values.min() < 0:
            raise ValueError("potential must be nonnegative")


def _hessian_sup(phi: ScalarField) -> float:
    grid = phi.grid
    s = phi.spectral
    k = grid.deriv_wavenumbers
    total = np.zeros(grid.shape)
    for i in range(grid.dim):
        for j in range(grid.dim):
            total += grid.inverse(-k[i] * k[j] * s) ** 2
    return float(np.sqrt(total).max())


def make_potential(phi: ScalarField, grad_phi: VectorField | None = None,
                   lap_phi: ScalarField | None = None, kind: str = "custom") -> PotentialSpec:
    """Complete a potential with its derivatives (spectral where not supplied)."""
    grad_phi = gradient(phi) if grad_phi is None else grad_phi
    lap_phi = laplacian(phi) if lap_phi is None else lap_phi
    sups = (
        float(np.abs(phi.values).max()),
        float(grad_phi.magnitude().values.max()),
        _hessian_sup(phi),
    )
    return PotentialSpec(phi, grad_phi, lap_phi, sups, kind)


def zero_potential(grid: GridSpec) -> PotentialSpec:
    z = ScalarField.zeros(grid)
    return PotentialSpec(z, VectorField.zeros(grid), z, (0.0, 0.0, 0.0), "zero")


def gravity_potential(grid: GridSpec, amplitude: float = 1.0) -> PotentialSpec:
    """Smooth periodic stand-in for a * x_d: a (1 - cos(2 pi x_d / L)) L / (2 pi)."""
    if amplitude < 0:
        raise ValueError("gravity amplitude must be nonnegative")
    L = grid.side_length[-1]
    kz = 2 * math.pi / L
    xd = grid.coords[-1]
    phi = ScalarField(grid, amplitude * (1.0 - np.cos(kz * xd)) / kz)
    comps = [np.zeros(grid.shape)] * (grid.dim - 1) + [amplitude * np.sin(kz * xd)]
    grad = VectorField.from_arrays(grid, comps)
    lap = ScalarField(grid, amplitude * kz * np.cos(kz * xd))
    return make_potential(phi, grad, lap, kind="gravity")


def radial_potential(grid: GridSpec, amplitude: float = 1.0, width: float = 1.0) -> PotentialSpec:
    """Periodic radial bump centred in the domain (centrifugal-type forcing)."""
    if amplitude < 0:
        raise ValueError("radial amplitude must be nonnegative")
    y = minimal_image_displacement(grid)
    expo = 0.0
    for yi, L in zip(y, grid.side_length):
        kk = 2 * math.pi / L
        expo = expo + (np.cos(kk * yi) - 1.0) / (kk * width) ** 2
    phi = ScalarField(grid, amplitude * np.exp(expo))
    return make_potential(phi, kind="radial")


def build_potential(grid: GridSpec, kind: str, amplitude: float = 1.0, width: float = 1.0) -> PotentialSpec:
    if kind == "zero":
        return zero_potential(grid)
    if kind == "gravity":
        return gravity_potential(grid, amplitude)
    if kind == "radial":
        return radial_potential(grid, amplitude, width)
    raise ValueError(f"unknown potential kind {kind!r}")


def build_model(family: str, kappa1: float = 1.0, c_star: float = 0.3, delta: float = 0.1,
                mu: float = 1.0, chi_perturbation: float = 0.0, **bump) -> ModelFunctions:
    perturb = {"perturbation": chi_perturbation, **bump} if chi_perturbation else {}
    if family == "rational":
        return make_rational_family(kappa1, c_star, mu, **perturb)
    if family == "step":
        return make_step_family(kappa1, c_star, delta, mu, **perturb)
    if family == "none":
        return make_null_family(mu)
    raise ValueError(f"unknown model family {family!r}")
