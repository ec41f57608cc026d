"""Spectral operators: Leray projection, heat semigroup, dealiased transport,
Gaussian mollifier and the sharp Fourier-ball cutoff."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Field, GridSpec, ScalarField, VectorField, gradient


@dataclass(frozen=True)
class CutoffParam:
    k: float

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"cutoff threshold must be positive, got {self.k}")


@dataclass(frozen=True)
class MollifierParam:
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"mollifier width must be positive, got {self.eps}")


def _as_cutoff(k) -> CutoffParam:
    return k if isinstance(k, CutoffParam) else CutoffParam(float(k))


def _as_mollifier(eps) -> MollifierParam:
    return eps if isinstance(eps, MollifierParam) else MollifierParam(float(eps))


def apply_multiplier(f: Field, mult: np.ndarray) -> Field:
    """Multiply every Fourier coefficient of ``f`` by ``mult``."""
    if isinstance(f, VectorField):
        return VectorField([ScalarField(f.grid, spectral=c.spectral * mult) for c in f])
    return ScalarField(f.grid, spectral=f.spectral * mult)


def dealias(f: Field) -> Field:
    return apply_multiplier(f, f.grid.dealias_mask)


def product(*factors: ScalarField) -> ScalarField:
    """Pointwise product with 2/3-rule truncation of every factor and of the result."""
    grid = factors[0].grid
    out = np.ones(grid.shape)
    for f in factors:
        out = out * dealias(f).values
    return dealias(ScalarField(grid, out))


def leray_project(v: VectorField) -> VectorField:
    grid = v.grid
    k = grid.deriv_wavenumbers
    kk = sum(ki**2 for ki in k)
    safe = np.where(kk == 0, 1.0, kk)
    specs = [c.spectral for c in v]
    kdotv = sum(ki * s for ki, s in zip(k, specs))
    return VectorField.from_spectral(grid, [s - ki * kdotv / safe for ki, s in zip(k, specs)])


def heat_factor(grid: GridSpec, t: float) -> np.ndarray:
    return np.exp(-grid.k2 * t)


def heat_propagate(f: Field, t: float) -> Field:
    if t < 0:
        raise ValueError(f"heat propagation time must be nonnegative, got {t}")
    return apply_multiplier(f, heat_factor(f.grid, t))


def advect(u: VectorField, f: ScalarField) -> ScalarField:
    """Dealiased convective derivative u . grad f."""
    grad = gradient(f)
    grid = f.grid
    total = np.zeros(grid.shape)
    for ui, gi in zip(u, grad):
        total += dealias(ui).values * dealias(gi).values
    return dealias(ScalarField(grid, total))


def advect_vector(u: VectorField, v: VectorField) -> VectorField:
    return VectorField([advect(u, vi) for vi in v])


def mollifier_multiplier(grid: GridSpec, eps) -> np.ndarray:
    e = _as_mollifier(eps).eps
    return np.exp(-0.5 * e**2 * grid.k2)


def mollify(f: Field, eps) -> Field:
    """Convolution with a Gaussian approximate identity of width ``eps``."""
    return apply_multiplier(f, mollifier_multiplier(f.grid, eps))


def cutoff_mask(grid: GridSpec, k) -> np.ndarray:
    return grid.k2 <= _as_cutoff(k).k


def cutoff(f: Field, k) -> Field:
    """Keep Fourier modes with |xi|^2 <= k."""
    return apply_multiplier(f, cutoff_mask(f.grid, k))
