"""Periodic grids, real fields with a Fourier dual, and the norms used by the estimates.

Spectral coefficients are stored in the half-complex (``rfftn``) layout and
normalised by the number of grid points, so the zero mode is the field mean.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import NonFiniteError

TWO_PI = 2.0 * math.pi


def fft_workers() -> int:
    """Data-parallel width for transforms, capped by ``CHEMFLOW_THREADS``."""
    raw = os.environ.get("CHEMFLOW_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _is_fft_friendly(n: int) -> bool:
    for p in (2, 3, 5):
        while n % p == 0:
            n //= p
    return n == 1


def check_finite(values: np.ndarray, what: str = "field") -> None:
    """Raise :class:`NonFiniteError` naming the first non-finite index."""
    ok = np.isfinite(values)
    if not ok.all():
        idx = tuple(int(i) for i in np.argwhere(~ok)[0])
        raise NonFiniteError(f"{what} has non-finite entry {values[idx]!r} at index {idx}")


@dataclass(frozen=True)
class GridSpec:
    dim: int
    points: int
    side_length: tuple[float, ...] | None = None
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.points < 16 or self.points % 2 or not _is_fft_friendly(self.points):
            raise ValueError(
                f"points_per_axis must be an even 2,3,5-smooth integer >= 16, got {self.points}"
            )
        if self.side_length is None:
            object.__setattr__(self, "side_length", (TWO_PI,) * self.dim)
        elif np.isscalar(self.side_length):
            object.__setattr__(self, "side_length", (float(self.side_length),) * self.dim)
        else:
            object.__setattr__(self, "side_length", tuple(float(s) for s in self.side_length))
        if len(self.side_length) != self.dim or min(self.side_length) <= 0:
            raise ValueError(f"side_length must hold {self.dim} positive values")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def size(self) -> int:
        return self.points**self.dim

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / self.points for L in self.side_length)

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def volume(self) -> float:
        return float(np.prod(self.side_length))

    @cached_property
    def center(self) -> tuple[float, ...]:
        return tuple(L / 2 for L in self.side_length)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        axes = [np.arange(self.points) * h for h in self.spacing]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def _mode_indices(self) -> tuple[np.ndarray, ...]:
        N = self.points
        out = []
        for axis in range(self.dim):
            if axis == self.dim - 1:
                m = np.arange(N // 2 + 1, dtype=float)
            else:
                m = np.fft.fftfreq(N, 1.0 / N)
            shape = [1] * self.dim
            shape[axis] = m.size
            out.append(m.reshape(shape))
        return tuple(out)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Physical wavenumbers per axis, broadcastable to the spectral shape."""
        return tuple(TWO_PI / L * m for L, m in zip(self.side_length, self._mode_indices))

    @cached_property
    def deriv_wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Wavenumbers used for first derivatives; the Nyquist entry is zeroed."""
        nyq = self.points // 2
        return tuple(
            np.where(np.abs(m) == nyq, 0.0, k) for m, k in zip(self._mode_indices, self.wavenumbers)
        )

    @cached_property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.shape[:-1] + (self.points // 2 + 1,)

    @cached_property
    def k2(self) -> np.ndarray:
        out = np.zeros(self.spectral_shape)
        for k in self.wavenumbers:
            out = out + k**2
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.dealias_fraction * self.points / 2
        mask = np.ones(self.spectral_shape, dtype=bool)
        for m in self._mode_indices:
            mask = mask & (np.abs(m) <= cut)
        return mask

    @cached_property
    def parseval_weights(self) -> np.ndarray:
        """Multiplicity of each stored half-spectrum coefficient in the full spectrum."""
        w = np.full(self.points // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        shape = [1] * self.dim
        shape[-1] = w.size
        return np.broadcast_to(w.reshape(shape), self.spectral_shape)

    @property
    def _axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    def forward(self, values: np.ndarray) -> np.ndarray:
        """Normalised real transform over the trailing ``dim`` axes (``spec[0] = mean``)."""
        return sfft.rfftn(values, axes=self._axes, workers=fft_workers()) / self.size

    def inverse(self, spectral: np.ndarray) -> np.ndarray:
        return sfft.irfftn(spectral * self.size, s=self.shape, axes=self._axes, workers=fft_workers())


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class ScalarField:
    """Immutable real grid function with a lazily computed spectral dual."""

    __slots__ = ("grid", "_values", "_spectral")

    def __init__(self, grid: GridSpec, values=None, *, spectral=None):
        if values is None and spectral is None:
            raise ValueError("either values or spectral must be given")
        self.grid = grid
        self._values = None
        self._spectral = None
        if values is not None:
            v = np.array(values, dtype=float)
            if v.ndim == 0:
                v = np.full(grid.shape, float(v))
            if v.shape != grid.shape:
                raise ValueError(f"values shape {v.shape} does not match grid {grid.shape}")
            check_finite(v)
            self._values = _readonly(v)
        if spectral is not None:
            s = np.array(spectral, dtype=complex)
            if s.shape != grid.spectral_shape:
                raise ValueError(f"spectral shape {s.shape} does not match {grid.spectral_shape}")
            check_finite(s, "spectral field")
            self._spectral = _readonly(s)

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable[..., np.ndarray]) -> "ScalarField":
        return cls(grid, np.broadcast_to(func(*grid.coords), grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls.constant(grid, 0.0)

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            self._values = _readonly(self.grid.inverse(self._spectral))
        return self._values

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            self._spectral = _readonly(self.grid.forward(self._values))
        return self._spectral

    def _combine(self, other, op):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            if self._values is None and other._values is None:
                return ScalarField(self.grid, spectral=op(self._spectral, other._spectral))
            return ScalarField(self.grid, op(self.values, other.values))
        return NotImplemented

    def __add__(self, other):
        if np.isscalar(other):
            return ScalarField(self.grid, self.values + other)
        return self._combine(other, np.add)

    def __sub__(self, other):
        if np.isscalar(other):
            return ScalarField(self.grid, self.values - other)
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        if np.isscalar(other):
            if self._values is None:
                return ScalarField(self.grid, spectral=self._spectral * other)
            return ScalarField(self.grid, self._values * other)
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values * other.values)
        return NotImplemented

    __radd__ = __add__
    __rmul__ = __mul__

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return self * -1.0

    def __truediv__(self, other):
        if np.isscalar(other):
            return self * (1.0 / other)
        return NotImplemented

    def map(self, func: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        """Pointwise application of ``func`` to the physical values."""
        return ScalarField(self.grid, func(self.values))

    def __repr__(self):
        return f"ScalarField(grid={self.grid.shape}, mean={self.spectral[(0,) * self.grid.dim].real:.6g})"


class VectorField:
    """``dim`` scalar components on a common grid."""

    __slots__ = ("grid", "components")

    def __init__(self, components: Sequence[ScalarField]):
        components = tuple(components)
        if not components:
            raise ValueError("vector field needs components")
        grid = components[0].grid
        if any(c.grid != grid for c in components):
            raise ValueError("all components must share one GridSpec")
        if len(components) != grid.dim:
            raise ValueError(f"expected {grid.dim} components, got {len(components)}")
        self.grid = grid
        self.components = components

    @classmethod
    def from_arrays(cls, grid: GridSpec, arrays) -> "VectorField":
        return cls([ScalarField(grid, a) for a in arrays])

    @classmethod
    def from_spectral(cls, grid: GridSpec, arrays) -> "VectorField":
        return cls([ScalarField(grid, spectral=a) for a in arrays])

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VectorField":
        return cls([ScalarField.zeros(grid) for _ in range(grid.dim)])

    @property
    def values(self) -> np.ndarray:
        return np.stack([c.values for c in self.components])

    @property
    def spectral(self) -> np.ndarray:
        return np.stack([c.spectral for c in self.components])

    def __getitem__(self, i: int) -> ScalarField:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def __len__(self):
        return len(self.components)

    def __add__(self, other):
        return VectorField([a + b for a, b in zip(self, other)])

    def __sub__(self, other):
        return VectorField([a - b for a, b in zip(self, other)])

    def __mul__(self, other):
        if np.isscalar(other):
            return VectorField([a * other for a in self])
        if isinstance(other, ScalarField):
            return VectorField([a * other for a in self])
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(np.sum(self.values**2, axis=0)))

    def __repr__(self):
        return f"VectorField(dim={len(self.components)}, grid={self.grid.shape})"


Field = ScalarField | VectorField


# ---------------------------------------------------------------------------
# transforms, norms and functionals
# ---------------------------------------------------------------------------

def transform_roundtrip(f: ScalarField) -> ScalarField:
    check_finite(f.values)
    spec = f.grid.forward(f.values)
    return ScalarField(f.grid, f.grid.inverse(spec))


def lp_norm(f: Field, p: float = 2.0) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    a = np.abs(f.values) if isinstance(f, ScalarField) else np.sqrt(np.sum(f.values**2, axis=0))
    if math.isinf(p):
        return float(a.max())
    if p == 2:
        return float(math.sqrt(np.sum(a * a) * f.grid.cell_volume))
    return float((np.sum(a**p) * f.grid.cell_volume) ** (1.0 / p))


def spectral_energy(f: Field, weight: np.ndarray | None = None) -> float:
    """``volume * sum |f_hat|^2 * weight`` over the full spectrum."""
    grid = f.grid
    specs = [f.spectral] if isinstance(f, ScalarField) else [c.spectral for c in f]
    w = grid.parseval_weights if weight is None else grid.parseval_weights * weight
    return float(grid.volume * sum(np.sum(w * np.abs(s) ** 2) for s in specs))


def sobolev_norm(f: Field, m: int) -> float:
    if m < 0:
        raise ValueError("Sobolev index must be nonnegative")
    return math.sqrt(spectral_energy(f, (1.0 + f.grid.k2) ** m))


def gradient(f: ScalarField) -> VectorField:
    s = f.spectral
    return VectorField.from_spectral(f.grid, [1j * k * s for k in f.grid.deriv_wavenumbers])


def divergence(v: VectorField) -> ScalarField:
    grid = v.grid
    s = sum(1j * k * c.spectral for k, c in zip(grid.deriv_wavenumbers, v))
    return ScalarField(grid, spectral=s)


def laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, spectral=-f.grid.k2 * f.spectral)


def curl(v: VectorField) -> ScalarField | VectorField:
    """Scalar vorticity in 2D, vector vorticity in 3D."""
    grid = v.grid
    k = grid.deriv_wavenumbers
    s = [c.spectral for c in v]
    if grid.dim == 2:
        return ScalarField(grid, spectral=1j * k[0] * s[1] - 1j * k[1] * s[0])
    return VectorField.from_spectral(
        grid,
        [
            1j * k[1] * s[2] - 1j * k[2] * s[1],
            1j * k[2] * s[0] - 1j * k[0] * s[2],
            1j * k[0] * s[1] - 1j * k[1] * s[0],
        ],
    )


def integral(f: ScalarField) -> float:
    return float(f.spectral[(0,) * f.grid.dim].real * f.grid.volume)


def inner(f: Field, g: Field) -> float:
    """L2 inner product by cell-volume quadrature."""
    return float(np.sum(f.values * g.values) * f.grid.cell_volume)


def minimal_image_displacement(grid: GridSpec) -> tuple[np.ndarray, ...]:
    out = []
    for x, c, L in zip(grid.coords, grid.center, grid.side_length):
        y = x - c
        out.append(y - L * np.round(y / L))
    return tuple(out)


def moment_weight(grid: GridSpec) -> ScalarField:
    """Japanese bracket of the minimal-image displacement from the domain centre."""
    y = minimal_image_displacement(grid)
    return ScalarField(grid, np.sqrt(1.0 + sum(yi**2 for yi in y)))


def weighted_moment(f: ScalarField, tol: float = 1e-8) -> float:
    v = f.values
    if v.min() < -tol * (1.0 + np.abs(v).max()):
        raise ValueError(f"weighted_moment needs a nonnegative field, min = {v.min():.3e}")
    return float(np.sum(moment_weight(f.grid).values * v) * f.grid.cell_volume)


def random_smooth_field(grid: GridSpec, rng: np.random.Generator, kmax: float = 6.0) -> ScalarField:
    """Band-limited random field with modes |xi| <= kmax (no Nyquist content)."""
    spec = rng.standard_normal(grid.spectral_shape) + 1j * rng.standard_normal(grid.spectral_shape)
    spec = np.where(grid.k2 <= kmax**2, spec, 0.0)
    # the inverse transform projects the self-conjugate planes onto Hermitian data
    values = grid.inverse(spec)
    return ScalarField(grid, values / values.std())
