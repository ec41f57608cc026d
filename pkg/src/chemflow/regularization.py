"""Regularisation ladder: mollified / Fourier-truncated runs and their convergence."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnostics import (
    DiagnosticsConfig,
    DiagnosticsRecord,
    ConservationMonitor,
    inequality_audit,
    record,
)
from .dynamics import State
from .errors import ChemflowError
from .fields import ScalarField, VectorField, gradient, lp_norm, moment_weight
from .model import ModelFunctions, PotentialSpec
from .operators import cutoff, cutoff_mask, leray_project, mollify
from .solver import StepConfig, full_rhs, integrate, regularized_rhs


@dataclass(frozen=True)
class LadderSpec:
    k_values: tuple[float, ...]
    eps_values: tuple[float, ...]
    scenario: str = "gaussian_drop"
    horizon: float = 0.25
    dt: float = 2.5e-3
    reference: str = "unregularized"  # or "finest"

    def __post_init__(self):
        k, e = tuple(self.k_values), tuple(self.eps_values)
        object.__setattr__(self, "k_values", k)
        object.__setattr__(self, "eps_values", e)
        if not k or not e:
            raise ValueError("ladder needs at least one rung")
        if len(k) != len(e):
            raise ValueError("k_values and eps_values pair up rung by rung and must match in length")
        if any(x <= 0 for x in k) or any(x <= 0 for x in e):
            raise ValueError("cutoffs and mollifier widths must be positive")
        if any(b <= a for a, b in zip(k, k[1:])):
            raise ValueError("k_values must be strictly ascending")
        if any(b >= a for a, b in zip(e, e[1:])):
            raise ValueError("eps_values must be strictly descending")
        if not (self.horizon > 0 and self.dt > 0):
            raise ValueError("horizon and dt must be positive")
        if self.reference not in ("unregularized", "finest"):
            raise ValueError(f"unknown ladder reference {self.reference!r}")

    @property
    def rungs(self) -> list[tuple[float, float]]:
        return list(zip(self.k_values, self.eps_values))


def regularize_initial_data(s0: State, k, eps) -> State:
    """(n0 * sigma_eps, c0 * sigma_eps, P_k (u0 * sigma_eps)), re-projected."""
    u = leray_project(cutoff(mollify(s0.u, eps), k))
    return State(mollify(s0.n, eps), mollify(s0.c, eps), u, s0.time)


def _plus_entropy(f: np.ndarray) -> np.ndarray:
    f = np.maximum(f, 0.0)
    out = np.zeros_like(f)
    pos = f > 1.0
    out[pos] = f[pos] * np.log(f[pos])
    return out


def _abs_entropy(f: np.ndarray) -> np.ndarray:
    f = np.maximum(f, 0.0)
    out = np.zeros_like(f)
    pos = f > 0
    out[pos] = f[pos] * np.abs(np.log(f[pos]))
    return out


def jensen_check(n0: ScalarField, eps) -> tuple[float, float, bool]:
    """(int m(n0)(ln m(n0))_+, int n0 |ln n0|, bound holds) with m = mollify."""
    dv = n0.grid.cell_volume
    m = mollify(n0, eps).values
    lhs = float(np.sum(_plus_entropy(m)) * dv)
    rhs = float(np.sum(_abs_entropy(n0.values)) * dv)
    return lhs, rhs, lhs <= rhs + 1e-6 * (1.0 + rhs)


@dataclass
class InitialApproxReport:
    k: float
    eps: float
    n_l1_error: float
    grad_c_l1_error: float
    u_l2sq_error: float
    grad_c_norm: float
    grad_c_norm_original: float
    grad_c_bound_ok: bool
    moment: float
    moment_original: float
    moment_tol: float
    moment_ok: bool
    jensen_lhs: float
    jensen_rhs: float
    jensen_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_initial_approx(n0: ScalarField, c0: ScalarField, u0: VectorField, k, eps,
                         tol: float = 1e-10) -> InitialApproxReport:
    """Approximation errors of the regularised data and the uniform bounds they keep.

    Gaussian smoothing can raise the moment of a convex weight by at most
    (d/2) eps^2 times the mass, which is the tolerance used for it.
    """
    g = n0.grid
    dv = g.cell_volume
    reg = regularize_initial_data(State(n0, c0, u0), k, eps)
    e = float(getattr(eps, "eps", eps))
    gc, gc_reg = gradient(c0), gradient(reg.c)
    n_err = lp_norm(reg.n - n0, 1)
    gc_err = float(np.sum(np.sqrt(np.sum((gc_reg.values - gc.values) ** 2, axis=0))) * dv)
    u_err = lp_norm(reg.u - u0, 2) ** 2
    w = moment_weight(g).values
    mom0 = float(np.sum(w * n0.values) * dv)
    mom = float(np.sum(w * reg.n.values) * dv)
    mass = float(np.sum(np.abs(n0.values)) * dv)
    mtol = 0.5 * g.dim * e**2 * mass + tol * (1.0 + mom0)
    ngc, ngc0 = lp_norm(gc_reg, 2), lp_norm(gc, 2)
    jl, jr, jok = jensen_check(n0, eps)
    return InitialApproxReport(
        k=float(getattr(k, "k", k)), eps=e,
        n_l1_error=n_err, grad_c_l1_error=gc_err, u_l2sq_error=u_err,
        grad_c_norm=ngc, grad_c_norm_original=ngc0, grad_c_bound_ok=ngc <= ngc0 + tol * (1.0 + ngc0),
        moment=mom, moment_original=mom0, moment_tol=mtol, moment_ok=mom <= mom0 + mtol,
        jensen_lhs=jl, jensen_rhs=jr, jensen_ok=jok,
    )


def state_distance(a: State, b: State) -> float:
    """||n_a - n_b||_2 + ||c_a - c_b||_2 + ||u_a - u_b||_2."""
    return lp_norm(a.n - b.n, 2) + lp_norm(a.c - b.c, 2) + lp_norm(a.u - b.u, 2)


@dataclass
class RungResult:
    k: float | None
    eps: float | None
    status: str
    final_time: float
    in_ball: bool
    invariants_ok: bool
    violations: list[str]
    initial: dict | None
    audit: dict | None
    distance: float | None = None
    records: list[DiagnosticsRecord] = field(default_factory=list, repr=False)
    final_state: State | None = field(default=None, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("records")
        d.pop("final_state")
        return d


def _run_rung(s0: State, mf, pot, spec: LadderSpec, diag: DiagnosticsConfig,
              k: float | None, eps: float | None, pos_tol: float) -> RungResult:
    cfg = StepConfig(dt=spec.dt, pos_tol=pos_tol)
    if k is None:
        start, rhs, mask = s0, full_rhs(mf, pot), None
        initial = None
    else:
        start = regularize_initial_data(s0, k, eps)
        rhs = regularized_rhs(mf, pot, k, eps)
        mask = ~cutoff_mask(s0.grid, k)
        initial = check_initial_approx(s0.n, s0.c, s0.u, k, eps).to_dict()
    recs = [record(start, mf, pot, diag)]
    monitor = ConservationMonitor(start, pos_tol=pos_tol)

    def outside(s: State) -> bool:
        return mask is not None and any(np.any(ui.spectral[mask]) for ui in s.u)

    in_ball = [not outside(start)]

    def observe(s: State) -> None:
        monitor.observe(s)
        recs.append(record(s, mf, pot, diag, recs[-1]))
        if outside(s):
            in_ball[0] = False

    status, final = "completed", None
    try:
        final = integrate(start, rhs, spec.horizon, cfg, on_step=observe)
    except ChemflowError as exc:
        status = f"aborted: {exc}"
    audit = inequality_audit(recs, form="3d").to_dict() if len(recs) >= 4 else None
    return RungResult(k, eps, status, recs[-1].time, in_ball[0], monitor.ok,
                      monitor.violations[:20], initial, audit, records=recs, final_state=final)


def _spread(values: list[float], atol: float) -> float:
    """max/min of a list of nonnegative constants; values within atol of zero count as equal."""
    vals = [abs(v) for v in values]
    hi, lo = max(vals), min(vals)
    if hi <= atol:
        return 1.0
    if lo <= atol:
        return math.inf
    return hi / lo


@dataclass
class LadderReport:
    spec: dict
    reference: str
    rungs: list[RungResult]
    distances: list[float | None]
    distances_monotone: bool
    audits_pass: bool
    constant_spread: dict
    constants_within_factor2: bool
    jensen_ok: bool

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "rungs"}
        d["rungs"] = [r.summary() for r in self.rungs]
        return d


def run_ladder(spec: LadderSpec, s0: State, mf: ModelFunctions, pot: PotentialSpec,
               diag: DiagnosticsConfig = DiagnosticsConfig(), pos_tol: float = 1e-8) -> LadderReport:
    """Run every rung, audit it, and tabulate final-time distances to the reference.

    The reference is either the unregularised run from the original data or
    the last (finest) rung.  A rung that aborts is recorded and the ladder
    continues; its distance is ``None`` and monotonicity then fails.
    """
    rungs = [_run_rung(s0, mf, pot, spec, diag, k, e, pos_tol) for k, e in spec.rungs]
    if spec.reference == "unregularized":
        ref = _run_rung(s0, mf, pot, spec, diag, None, None, pos_tol).final_state
    else:
        ref = rungs[-1].final_state
    for r in rungs:
        if r.final_state is not None and ref is not None:
            r.distance = state_distance(r.final_state, ref)
    dist = [r.distance for r in rungs]
    mono = all(d is not None for d in dist) and all(
        b <= a * (1 + 1e-12) for a, b in zip(dist, dist[1:]))
    audits = [r.audit for r in rungs]
    audits_pass = all(a is not None and a["passed"] for a in audits)
    spread = {}
    if all(a is not None for a in audits):
        scale = max(abs(a["C0"]) for a in audits)
        spread = {
            "C0": _spread([a["C0"] for a in audits], 1e-12 * scale),
            "C1": _spread([a["C1"] for a in audits], 1e-6 * max(scale, 1.0)),
        }
    within = bool(spread) and all(v <= 2.0 for v in spread.values())
    jensen = all(r.initial is None or r.initial["jensen_ok"] for r in rungs)
    return LadderReport(asdict(spec), spec.reference, rungs, dist, mono, audits_pass,
                        spread, within, jensen)
