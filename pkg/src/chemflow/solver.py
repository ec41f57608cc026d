"""Time integration, step-size control and the Picard iteration.

Diffusion is integrated exactly through the heat multiplier; the remaining
terms use Heun's method in the integrating-factor variables:

    k1 = N(s)
    s* = E (s + dt k1)
    k2 = N(s*)
    s' = E (s + dt/2 k1) + dt/2 k2,        E = exp(-|xi|^2 dt)

The Picard iteration reuses exactly this stage structure with the linearised
tendency, freezing coefficients at the matching stage of the previous
iterate, so its fixed point is the discrete nonlinear solution.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dynamics import State, Tendency, check_state, rhs_full, rhs_linearized, rhs_regularized
from .errors import BlowupSuspected, NonFiniteError, PicardDivergence
from .fields import ScalarField, VectorField, gradient, sobolev_norm
from .model import ModelFunctions, PotentialSpec

Rhs = Callable[[State], Tendency]


@dataclass(frozen=True)
class StepConfig:
    dt: float | str = "auto"
    cfl_safety: float = 0.4
    scheme: str = "imex_rk2"
    pos_tol: float = 1e-8
    dt_max: float = 5e-3
    speed_floor: float = 1e-12
    max_halvings: int = 10

    def __post_init__(self):
        if self.dt != "auto" and not (isinstance(self.dt, (int, float)) and self.dt > 0):
            raise ValueError(f"dt must be positive or 'auto', got {self.dt!r}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.scheme != "imex_rk2":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")


def full_rhs(mf: ModelFunctions, pot: PotentialSpec) -> Rhs:
    return lambda s: rhs_full(s, mf, pot, diffusion=False)


def regularized_rhs(mf: ModelFunctions, pot: PotentialSpec, k, eps) -> Rhs:
    return lambda s: rhs_regularized(s, mf, pot, k, eps, diffusion=False)


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------

def _axpy(s: State, t: Tendency, a: float) -> State:
    g = s.grid
    return State(
        ScalarField(g, spectral=s.n.spectral + a * t.dn.spectral),
        ScalarField(g, spectral=s.c.spectral + a * t.dc.spectral),
        VectorField.from_spectral(g, [ui.spectral + a * di.spectral for ui, di in zip(s.u, t.du)]),
        s.time,
    )


def _heat(s: State, E: np.ndarray, time: float) -> State:
    g = s.grid
    return State(
        ScalarField(g, spectral=s.n.spectral * E),
        ScalarField(g, spectral=s.c.spectral * E),
        VectorField.from_spectral(g, [ui.spectral * E for ui in s.u]),
        time,
    )


def if_rk2(s: State, dt: float, stage1: Rhs, stage2: Rhs | None = None) -> tuple[State, State]:
    """One integrating-factor Heun step; returns (new state, predictor state)."""
    stage2 = stage1 if stage2 is None else stage2
    E = np.exp(-s.grid.k2 * dt)
    t1 = s.time + dt
    k1 = stage1(s)
    pred = _heat(_axpy(s, k1, dt), E, t1)
    k2 = stage2(pred)
    new = _axpy(_heat(_axpy(s, k1, 0.5 * dt), E, t1), k2, 0.5 * dt)
    return new, pred


def step(s: State, cfg: StepConfig, rhs: Rhs, dt: float | None = None) -> State:
    """Advance by ``dt``; a rejected step is split into halves recursively."""
    if dt is None:
        dt = cfl_dt(s, cfg) if cfg.dt == "auto" else float(cfg.dt)
    return _advance(s, dt, cfg, rhs, 0)


def _advance(s: State, dt: float, cfg: StepConfig, rhs: Rhs, depth: int) -> State:
    try:
        new, _ = if_rk2(s, dt, rhs)
        problems = check_state(new, cfg.pos_tol)
    except NonFiniteError as exc:
        problems = [str(exc)]
    if not problems:
        return new
    if depth >= cfg.max_halvings:
        raise BlowupSuspected(
            f"step rejected after {depth} halvings at t = {s.time:.6g} (dt = {dt:.3e}): "
            + "; ".join(problems),
            state=s,
        )
    half = _advance(s, 0.5 * dt, cfg, rhs, depth + 1)
    return _advance(half, 0.5 * dt, cfg, rhs, depth + 1)


def cfl_dt(s: State, cfg: StepConfig, mf: ModelFunctions | None = None) -> float:
    """Advective step limit; diffusion is exact and imposes no restriction."""
    h = min(s.grid.spacing)
    speed = float(s.u.magnitude().values.max())
    if mf is not None:
        drift = gradient(s.c).magnitude().values * np.abs(mf.chi(s.c.values))
        speed += float(drift.max())
    return min(cfg.cfl_safety * h / (speed + cfg.speed_floor), cfg.dt_max)


def integrate(
    s0: State,
    rhs: Rhs,
    t_end: float,
    cfg: StepConfig,
    *,
    mf: ModelFunctions | None = None,
    on_step: Callable[[State], None] | None = None,
) -> State:
    """Step from ``s0.time`` to ``t_end``.

    With a fixed ``cfg.dt`` the interval is divided into equal steps no larger
    than ``dt`` so that samples are uniform; with ``"auto"`` each step uses
    :func:`cfl_dt` and the last one is shortened to land on ``t_end``.
    """
    s = s0
    span = t_end - s0.time
    if span < 0:
        raise ValueError("t_end precedes the initial time")
    if cfg.dt != "auto":
        steps = max(1, math.ceil(span / float(cfg.dt) - 1e-9)) if span > 0 else 0
        h = span / steps if steps else 0.0
        for i in range(steps):
            s = step(s, cfg, rhs, h).at(s0.time + (i + 1) * h)
            if on_step is not None:
                on_step(s)
        return s
    while t_end - s.time > 1e-12 * max(1.0, abs(t_end)):
        h = min(cfl_dt(s, cfg, mf), t_end - s.time)
        s = step(s, cfg, rhs, h)
        if on_step is not None:
            on_step(s)
    return s.at(t_end)


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------

def x_m_norm(s: State, m: int) -> float:
    """||n||_{H^{m-1}} + ||c||_{H^m} + ||u||_{H^m}."""
    return sobolev_norm(s.n, m - 1) + sobolev_norm(s.c, m) + sobolev_norm(s.u, m)


def _difference(a: State, b: State) -> State:
    g = a.grid
    return State(
        ScalarField(g, spectral=a.n.spectral - b.n.spectral),
        ScalarField(g, spectral=a.c.spectral - b.c.spectral),
        VectorField.from_spectral(g, [x.spectral - y.spectral for x, y in zip(a.u, b.u)]),
        a.time,
    )


@dataclass
class PicardReport:
    iterate_count: int
    delta_norms: list[float]
    contraction_ratios: list[float]
    horizon: float
    sobolev_index: int
    converged: bool
    dt: float
    steps: int
    tol: float

    def to_dict(self) -> dict:
        return asdict(self)


def _picard_sweep(s0, frozen, predictors, dt, mf, pot):
    """Integrate the linearised system once; return the new trajectory and predictors."""
    traj, preds = [s0], []
    s = s0
    for i in range(len(predictors)):
        f1, f2 = frozen[i], predictors[i]
        s, pred = if_rk2(
            s, dt,
            lambda x, f=f1: rhs_linearized(x, f, mf, pot, diffusion=False),
            lambda x, f=f2: rhs_linearized(x, f, mf, pot, diffusion=False),
        )
        s = s.at(s0.time + (i + 1) * dt)
        traj.append(s)
        preds.append(pred)
    return traj, preds


def picard_solve(
    s0: State,
    horizon: float,
    mf: ModelFunctions,
    pot: PotentialSpec,
    m: int = 3,
    tol: float = 1e-10,
    max_iters: int = 30,
    dt: float = 1e-3,
    divergence_run: int = 3,
    raise_on_divergence: bool = True,
) -> tuple[State, PicardReport]:
    """Picard iteration on [0, horizon] starting from the constant trajectory s0.

    ``delta_norms[j]`` is the sup over the time grid of the X_m norm of the
    difference between iterates j+1 and j.  Iteration stops once a difference
    falls below ``tol`` times the X_m norm of the initial data.
    """
    if m < 3:
        raise ValueError("Sobolev index m must be at least 3")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    steps = max(1, math.ceil(horizon / dt - 1e-9))
    h = horizon / steps
    traj = [s0] * (steps + 1)
    preds = [s0] * steps
    scale = x_m_norm(s0, m)
    deltas: list[float] = []
    ratios: list[float] = []
    converged = False
    above = 0
    for _ in range(max_iters):
        new_traj, new_preds = _picard_sweep(s0, traj, preds, h, mf, pot)
        delta = max(x_m_norm(_difference(a, b), m) for a, b in zip(new_traj, traj))
        deltas.append(delta)
        traj, preds = new_traj, new_preds
        if len(deltas) > 1:
            ratio = delta / deltas[-2] if deltas[-2] > 0 else 0.0
            ratios.append(ratio)
            above = above + 1 if ratio > 1 else 0
        if delta <= tol * scale:
            converged = True
            break
        if above >= divergence_run:
            report = PicardReport(len(deltas), deltas, ratios, horizon, m, False, h, steps, tol)
            if raise_on_divergence:
                raise PicardDivergence(
                    f"Picard ratios exceeded 1 for {divergence_run} consecutive iterations", report)
            return traj[-1], report
    report = PicardReport(len(deltas), deltas, ratios, horizon, m, converged, h, steps, tol)
    return traj[-1], report


@dataclass
class SweepReport:
    horizons: list[float]
    first_ratios: list[float]
    ratios: list[list[float]] = field(default_factory=list)
    monotone: bool = True
    first_noncontracting: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def contraction_sweep(
    s0: State,
    mf: ModelFunctions,
    pot: PotentialSpec,
    horizon0: float,
    doublings: int,
    m: int = 3,
    dt: float = 1e-3,
    iterations: int = 3,
) -> SweepReport:
    """Repeat a short Picard run while doubling the horizon.

    The contraction metric at each horizon is the first ratio
    delta_1 / delta_0; it should not decrease as the horizon grows.
    """
    horizons, firsts, all_ratios = [], [], []
    for j in range(doublings + 1):
        T = horizon0 * 2**j
        _, rep = picard_solve(s0, T, mf, pot, m=m, tol=0.0, max_iters=iterations, dt=dt,
                              raise_on_divergence=False)
        horizons.append(T)
        firsts.append(rep.contraction_ratios[0] if rep.contraction_ratios else 0.0)
        all_ratios.append(rep.contraction_ratios)
    monotone = all(b >= a for a, b in zip(firsts, firsts[1:]))
    bad = [T for T, r in zip(horizons, all_ratios) if any(x > 1 for x in r)]
    return SweepReport(horizons, firsts, all_ratios, monotone, bad[0] if bad else None)
