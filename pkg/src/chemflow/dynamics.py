"""Right-hand sides of the coupled chemotaxis / Navier-Stokes system.

Every variant is assembled by :func:`_assemble`, which takes each factor of
each nonlinear term from an explicitly named source.  The full system uses
one state for everything; the Picard linearisation freezes the coefficients
at the previous iterate; the regularised system mollifies the chemotactic
flux and the consumption term and confines the fluid to a Fourier ball.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NonFiniteError
from .fields import (
    GridSpec,
    ScalarField,
    VectorField,
    check_finite,
    divergence,
    lp_norm,
)
from .model import ModelFunctions, PotentialSpec
from .operators import CutoffParam, MollifierParam, cutoff, cutoff_mask, leray_project, mollifier_multiplier


@dataclass(frozen=True)
class State:
    n: ScalarField
    c: ScalarField
    u: VectorField
    time: float = 0.0

    @property
    def grid(self) -> GridSpec:
        return self.n.grid

    def at(self, time: float) -> "State":
        return replace(self, time=float(time))


@dataclass(frozen=True)
class Tendency:
    dn: ScalarField
    dc: ScalarField
    du: VectorField


def check_state(s: State, pos_tol: float = 1e-8) -> list[str]:
    """Return a description of every violated State invariant (empty if valid)."""
    problems = []
    for name, f in (("n", s.n), ("c", s.c)):
        v = f.values
        floor = -pos_tol * (1.0 + np.abs(v).max())
        if v.min() < floor:
            problems.append(f"min {name} = {v.min():.3e} below {floor:.3e}")
    div = lp_norm(divergence(s.u), 2)
    if div > 1e-10 * (1.0 + lp_norm(s.u, 2)):
        problems.append(f"divergence of u = {div:.3e}")
    return problems


class _Spectral:
    """Per-call helper: dealiased transforms on one grid."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.mask = grid.dealias_mask
        self.k = grid.deriv_wavenumbers

    def phys(self, spec):
        return self.grid.inverse(spec * self.mask)

    def spec(self, values):
        return self.grid.forward(values) * self.mask

    def grad(self, spec):
        return self.grid.inverse(np.stack([1j * ki * spec * self.mask for ki in self.k]))

    def phys_all(self, specs):
        return self.grid.inverse(np.stack(specs) * self.mask)

    def truncated(self, values):
        """Physical values of the dealiased version of a pointwise field."""
        return self.grid.inverse(self.spec(values))


def _term(name: str, spec: np.ndarray) -> np.ndarray:
    try:
        check_finite(spec, name)
    except NonFiniteError as exc:
        raise NonFiniteError(f"non-finite value in term '{name}': {exc}") from None
    return spec


def _assemble(
    mf: ModelFunctions,
    pot: PotentialSpec,
    *,
    velocity: VectorField,
    n: ScalarField,
    c: ScalarField,
    u: VectorField,
    flux_n: ScalarField,
    flux_c: ScalarField,
    sink_c: ScalarField,
    sink_n: ScalarField,
    force_n: ScalarField,
    diffusion: bool = True,
    cutoff_k: CutoffParam | None = None,
    eps: MollifierParam | None = None,
) -> Tendency:
    grid = n.grid
    S = _Spectral(grid)
    k2 = grid.k2
    zero = np.zeros(grid.spectral_shape, dtype=complex)
    # identically vanishing terms are skipped, not evaluated
    moving = any(np.any(ui.spectral) for ui in velocity)
    coupled = mf.family.get("name") != "none"
    forced = pot.kind != "zero"
    vel = S.phys_all([ui.spectral for ui in velocity]) if moving else None

    def transport(name, target_spec):
        if not moving:
            return zero
        g = S.grad(target_spec)
        return _term(name, S.spec(np.sum(vel * g, axis=0)))

    mollifier = mollifier_multiplier(grid, eps) if eps is not None else None

    # cell density: transport, chemotactic flux in divergence form
    n_spec = n.spectral
    dn = -transport("u.grad n", n_spec)
    c_spec = c.spectral
    dc = -transport("u.grad c", c_spec)
    if coupled:
        chi_c = S.truncated(mf.chi(S.phys(flux_c.spectral)))
        drift = chi_c * S.grad(flux_c.spectral)
        if mollifier is not None:
            drift = grid.inverse(grid.forward(drift) * mollifier)
        flux = S.spec(S.phys(flux_n.spectral) * drift)
        chemo = _term("div(chi(c) n grad c)", sum(1j * ki * fi for ki, fi in zip(S.k, flux)))
        dn = dn - chemo

        # oxygen consumption
        k_c = S.truncated(mf.k(S.phys(sink_c.spectral)))
        consumer = sink_n.spectral
        if mollifier is not None:
            consumer = consumer * mollifier
        dc = dc - _term("k(c) n", S.spec(k_c * S.phys(consumer)))

    # fluid: transport and buoyancy, projected
    du = [-transport(f"u.grad u[{j}]", uj.spectral) for j, uj in enumerate(u)]
    if forced:
        gphi = S.phys_all([p.spectral for p in pot.grad_phi])
        force = S.spec(S.phys(force_n.spectral) * gphi)
        du = [dj - _term(f"n grad phi[{j}]", fj) for j, (dj, fj) in enumerate(zip(du, force))]

    if diffusion:
        dn = dn - k2 * n_spec
        dc = dc - k2 * c_spec
        du = [dj - k2 * uj.spectral for dj, uj in zip(du, u)]

    du_field = VectorField.from_spectral(grid, du)
    if cutoff_k is not None:
        du_field = cutoff(du_field, cutoff_k)
    du_field = leray_project(du_field)
    return Tendency(
        ScalarField(grid, spectral=dn),
        ScalarField(grid, spectral=dc),
        du_field,
    )


def rhs_full(s: State, mf: ModelFunctions, pot: PotentialSpec, *, diffusion: bool = True) -> Tendency:
    """Tendency of the unregularised system at state ``s``."""
    return _assemble(
        mf, pot,
        velocity=s.u, n=s.n, c=s.c, u=s.u,
        flux_n=s.n, flux_c=s.c, sink_c=s.c, sink_n=s.n, force_n=s.n,
        diffusion=diffusion,
    )


def rhs_regularized(s: State, mf: ModelFunctions, pot: PotentialSpec, k, eps, *,
                    diffusion: bool = True) -> Tendency:
    """Tendency of the mollified / Fourier-truncated system."""
    k = k if isinstance(k, CutoffParam) else CutoffParam(float(k))
    eps = eps if isinstance(eps, MollifierParam) else MollifierParam(float(eps))
    u = cutoff(s.u, k)
    return _assemble(
        mf, pot,
        velocity=u, n=s.n, c=s.c, u=u,
        flux_n=s.n, flux_c=s.c, sink_c=s.c, sink_n=s.n, force_n=s.n,
        diffusion=diffusion, cutoff_k=k, eps=eps,
    )


def rhs_linearized(s_new: State, s_frozen: State, mf: ModelFunctions, pot: PotentialSpec, *,
                   diffusion: bool = True) -> Tendency:
    """Linear system for the next Picard iterate with coefficients frozen at ``s_frozen``."""
    if s_new.grid != s_frozen.grid:
        raise ValueError("new and frozen states must share one grid")
    return _assemble(
        mf, pot,
        velocity=s_frozen.u, n=s_new.n, c=s_new.c, u=s_new.u,
        flux_n=s_new.n, flux_c=s_frozen.c,
        sink_c=s_frozen.c, sink_n=s_frozen.n, force_n=s_frozen.n,
        diffusion=diffusion,
    )


# ---------------------------------------------------------------------------
# two-dimensional vorticity form and pressure
# ---------------------------------------------------------------------------

def velocity_from_vorticity(omega: ScalarField) -> VectorField:
    grid = omega.grid
    if grid.dim != 2:
        raise ValueError("vorticity/stream-function form is two-dimensional")
    k1, k2 = grid.deriv_wavenumbers
    kk = k1**2 + k2**2
    safe = np.where(kk == 0, 1.0, kk)
    w = np.where(kk == 0, 0.0, omega.spectral) / safe
    return VectorField.from_spectral(grid, [1j * k2 * w, -1j * k1 * w])


def rhs_vorticity2d(omega: ScalarField, n: ScalarField, pot: PotentialSpec, *,
                    diffusion: bool = True, mean_tol: float = 1e-12) -> ScalarField:
    """d omega/dt = Lap omega - u.grad omega - grad_perp n . grad phi."""
    grid = omega.grid
    if grid.dim != 2:
        raise ValueError("rhs_vorticity2d requires a two-dimensional grid")
    mean = omega.spectral[0, 0].real
    if abs(mean) > mean_tol * (1.0 + np.abs(omega.values).max()):
        raise ValueError(f"vorticity must be mean-free, mean = {mean:.3e}")
    S = _Spectral(grid)
    u = velocity_from_vorticity(omega)
    vel = [S.phys(ui.spectral) for ui in u]
    g_om = S.grad(omega.spectral)
    adv = _term("u.grad omega", S.spec(vel[0] * g_om[0] + vel[1] * g_om[1]))
    gn = S.grad(n.spectral)
    gphi = [S.phys(p.spectral) for p in pot.grad_phi]
    # grad_perp n = (-d2 n, d1 n)
    forcing = _term("grad_perp n . grad phi", S.spec(-gn[1] * gphi[0] + gn[0] * gphi[1]))
    out = -adv - forcing
    if diffusion:
        out = out - grid.k2 * omega.spectral
    return ScalarField(grid, spectral=out)


def pressure_recover(s: State, mf: ModelFunctions, pot: PotentialSpec) -> ScalarField:
    """Mean-free p solving -Lap p = div(u.grad u + n grad phi)."""
    grid = s.grid
    S = _Spectral(grid)
    vel = [S.phys(ui.spectral) for ui in s.u]
    n_phys = S.phys(s.n.spectral)
    rhs = 0.0
    for kj, uj, pj in zip(S.k, s.u, pot.grad_phi):
        g = S.grad(uj.spectral)
        fj = S.spec(sum(vi * gi for vi, gi in zip(vel, g)) + n_phys * S.phys(pj.spectral))
        rhs = rhs + 1j * kj * fj
    kk = sum(ki**2 for ki in S.k)
    safe = np.where(kk == 0, 1.0, kk)
    p = np.where(kk == 0, 0.0, rhs / safe)
    return ScalarField(grid, spectral=p)
