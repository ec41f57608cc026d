"""Functionals of the a priori estimates, identity residuals, audits and monitors."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import linprog

from .dynamics import State
from .fields import (
    GridSpec,
    ScalarField,
    curl,
    gradient,
    integral,
    laplacian,
    lp_norm,
    minimal_image_displacement,
    moment_weight,
)
from .model import ModelFunctions, PotentialSpec
from .solver import x_m_norm


@dataclass(frozen=True)
class DiagnosticsConfig:
    lambda1: float = 1.0
    sobolev_m: int = 3
    serrin_p: float = 4.0
    serrin_q: float = 8.0
    energy_form: str = "auto"  # "2d", "3d" or "auto" (follow the grid dimension)

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise ValueError("lambda1 must be positive")
        if self.sobolev_m < 0:
            raise ValueError("sobolev_m must be nonnegative")
        if not (self.serrin_p > 3 and self.serrin_q >= 2):
            raise ValueError("Serrin pair needs p > 3 and q >= 2")
        if abs(3.0 / self.serrin_p + 2.0 / self.serrin_q - 1.0) > 1e-12:
            raise ValueError("Serrin pair must satisfy 3/p + 2/q = 1")
        if self.energy_form not in ("auto", "2d", "3d"):
            raise ValueError(f"unknown energy form {self.energy_form!r}")

    def form_for(self, grid: GridSpec) -> str:
        return f"{grid.dim}d" if self.energy_form == "auto" else self.energy_form


@dataclass(frozen=True)
class DiagnosticsRecord:
    time: float
    mass: float
    c_l1: float
    c_l2: float
    c_linf: float
    entropy: float
    neg_entropy: float
    moment: float
    grad_sqrt_n_sq: float
    grad_c_sq: float
    lap_c_sq: float
    kinetic: float
    grad_u_sq: float
    potential_coupling: float
    energy_F: float
    grad_c_inf: float
    acc_grad_c_inf: float
    serrin_acc: float
    omega_l2: float
    min_n: float
    min_c: float
    max_c: float
    x_m_norm: float
    lambda1: float
    mu: float
    # integrand of serrin_acc, carried for the trapezoidal update only
    serrin_rate: float = field(default=0.0, repr=False, metadata={"csv": False})


CSV_COLUMNS: tuple[str, ...] = tuple(
    f.name for f in fields(DiagnosticsRecord) if f.metadata.get("csv", True)
)


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------

def _xlogx(v: np.ndarray) -> np.ndarray:
    """v ln v with 0 ln 0 = 0 (v >= 0)."""
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = v[pos] * np.log(v[pos])
    return out


def _n_floor(n: np.ndarray) -> float:
    return max(1e-12 * float(np.abs(n).max()), np.finfo(float).tiny)


def _components(s: State, pot: PotentialSpec) -> dict:
    g = s.grid
    dv = g.cell_volume
    n = s.n.values
    npos = np.maximum(n, 0.0)
    gn = gradient(s.n).values
    gc = gradient(s.c).values
    uv = s.u.values
    grad_u_sq = 0.0
    for ui in s.u:
        grad_u_sq += float(np.sum(gradient(ui).values ** 2))
    return {
        "mass": integral(s.n),
        "entropy": float(np.sum(_xlogx(npos)) * dv),
        "neg_entropy": float(np.sum(npos * np.maximum(-np.log(np.where(npos > 0, npos, 1.0)), 0.0)) * dv),
        "moment": float(np.sum(moment_weight(g).values * n) * dv),
        "grad_sqrt_n_sq": float(np.sum(np.sum(gn**2, axis=0) / (4.0 * np.maximum(n, _n_floor(n)))) * dv),
        "grad_c_sq": float(np.sum(gc**2) * dv),
        "grad_c_inf": float(np.sqrt(np.sum(gc**2, axis=0)).max()),
        "lap_c_sq": float(np.sum(laplacian(s.c).values ** 2) * dv),
        "kinetic": 0.5 * float(np.sum(uv**2) * dv),
        "grad_u_sq": grad_u_sq * dv,
        "potential_coupling": float(np.sum(n * pot.phi.values) * dv),
    }


def _energy(comp: dict, mu: float, lambda1: float, form: str) -> float:
    if form == "2d":
        return (comp["entropy"] + mu * comp["grad_c_sq"]
                + lambda1 * (comp["kinetic"] + comp["potential_coupling"]))
    return (lambda1 * (comp["kinetic"] + comp["potential_coupling"]) + comp["entropy"]
            + 0.5 * comp["grad_c_sq"] + comp["moment"])


def energy_functional(s: State, mf: ModelFunctions, pot: PotentialSpec, lambda1: float = 1.0,
                      form: str = "2d") -> float:
    """Entropy-energy functional.

    ``"2d"``: int n ln n + mu |grad c|^2 + (lambda1/2)|u|^2 + lambda1 n phi.
    ``"3d"``: int lambda1(|u|^2/2 + n phi) + n ln n + |grad c|^2/2 + <x> n.
    """
    if form not in ("2d", "3d"):
        raise ValueError(f"unknown energy form {form!r}")
    return _energy(_components(s, pot), mf.mu, lambda1, form)


def record(s: State, mf: ModelFunctions, pot: PotentialSpec,
           cfg: DiagnosticsConfig = DiagnosticsConfig(),
           prev: DiagnosticsRecord | None = None) -> DiagnosticsRecord:
    """Evaluate every monitored functional; accumulators advance by the trapezoidal rule."""
    comp = _components(s, pot)
    rate = lp_norm(s.u, cfg.serrin_p) ** cfg.serrin_q
    acc_c = acc_u = 0.0
    if prev is not None:
        dt = s.time - prev.time
        acc_c = prev.acc_grad_c_inf + 0.5 * dt * (prev.grad_c_inf**2 + comp["grad_c_inf"] ** 2)
        acc_u = prev.serrin_acc + 0.5 * dt * (prev.serrin_rate + rate)
    c = s.c.values
    return DiagnosticsRecord(
        time=float(s.time),
        mass=comp["mass"],
        c_l1=lp_norm(s.c, 1),
        c_l2=lp_norm(s.c, 2),
        c_linf=lp_norm(s.c, math.inf),
        entropy=comp["entropy"],
        neg_entropy=comp["neg_entropy"],
        moment=comp["moment"],
        grad_sqrt_n_sq=comp["grad_sqrt_n_sq"],
        grad_c_sq=comp["grad_c_sq"],
        lap_c_sq=comp["lap_c_sq"],
        kinetic=comp["kinetic"],
        grad_u_sq=comp["grad_u_sq"],
        potential_coupling=comp["potential_coupling"],
        energy_F=_energy(comp, mf.mu, cfg.lambda1, cfg.form_for(s.grid)),
        grad_c_inf=comp["grad_c_inf"],
        acc_grad_c_inf=acc_c,
        serrin_acc=acc_u,
        omega_l2=lp_norm(curl(s.u), 2),
        min_n=float(s.n.values.min()),
        min_c=float(c.min()),
        max_c=float(c.max()),
        x_m_norm=x_m_norm(s, cfg.sobolev_m),
        lambda1=float(cfg.lambda1),
        mu=float(mf.mu),
        serrin_rate=rate,
    )


def neg_entropy_constant(grid: GridSpec) -> float:
    """int exp(-|y|/2) over the torus cell, y the minimal-image displacement."""
    y = minimal_image_displacement(grid)
    r = np.sqrt(sum(yi**2 for yi in y))
    return float(np.sum(np.exp(-0.5 * r)) * grid.cell_volume)


def neg_entropy_bound_holds(rec: DiagnosticsRecord, grid: GridSpec) -> bool:
    """int n (ln n)_- <= C + int <x> n with C = int exp(-|y|/2)."""
    return rec.neg_entropy <= neg_entropy_constant(grid) + rec.moment


def aa_cancellation(s: State, mf: ModelFunctions) -> tuple[float, float]:
    """(|int (chi(c) - mu k(c)) Lap c n|, 1e-13 ||Lap c||_2 ||n||_2)."""
    c = s.c.values
    lap = laplacian(s.c)
    val = abs(float(np.sum((mf.chi(c) - mf.mu * mf.k(c)) * lap.values * s.n.values)
                    * s.grid.cell_volume))
    return val, 1e-13 * lp_norm(lap, 2) * lp_norm(s.n, 2)


# ---------------------------------------------------------------------------
# identity residuals
# ---------------------------------------------------------------------------

IDENTITY_TAGS = ("cq", "entropy", "h1c", "l2u", "nphi", "moment")


@dataclass
class ResidualSeries:
    tag: str
    times: np.ndarray
    derivative: np.ndarray
    rhs: np.ndarray
    absolute: np.ndarray
    relative: np.ndarray
    scale: float


def _identity_terms(s: State, which: str, mf: ModelFunctions, pot: PotentialSpec, q: float):
    """Return (G, [right-hand side terms]) for one identity at one state."""
    dv = s.grid.cell_volume
    n, c = s.n.values, s.c.values
    gc = gradient(s.c).values
    if which == "cq":
        cp = np.maximum(c, 0.0)
        G = float(np.sum(cp**q) * dv) / q
        return G, [
            -(q - 1) * float(np.sum(cp ** (q - 2) * np.sum(gc**2, axis=0)) * dv),
            -float(np.sum(mf.k(c) * n * cp ** (q - 1)) * dv),
        ]
    if which == "entropy":
        gn = gradient(s.n).values
        lap_c = laplacian(s.c).values
        G = float(np.sum(_xlogx(np.maximum(n, 0.0))) * dv)
        return G, [
            -float(np.sum(np.sum(gn**2, axis=0) / np.maximum(n, _n_floor(n))) * dv),
            -float(np.sum(mf.chi_prime(c) * np.sum(gc**2, axis=0) * n) * dv),
            -float(np.sum(mf.chi(c) * lap_c * n) * dv),
        ]
    if which == "h1c":
        lap_c = laplacian(s.c).values
        stretch = 0.0
        for i, ui in enumerate(s.u):
            gu = gradient(ui).values
            stretch += float(np.sum(np.sum(gc * gu, axis=0) * gc[i]))
        return 0.5 * float(np.sum(gc**2) * dv), [
            -float(np.sum(lap_c**2) * dv),
            float(np.sum(mf.k(c) * lap_c * n) * dv),
            -stretch * dv,
        ]
    if which == "l2u":
        uv = s.u.values
        grad_u = sum(float(np.sum(gradient(ui).values ** 2)) for ui in s.u)
        return 0.5 * float(np.sum(uv**2) * dv), [
            -grad_u * dv,
            -float(np.sum(n * np.sum(pot.grad_phi.values * uv, axis=0)) * dv),
        ]
    if which == "nphi":
        gn = gradient(s.n).values
        gphi = pot.grad_phi.values
        phi = pot.phi.values
        return float(np.sum(n * phi) * dv), [
            -float(np.sum(np.sum(s.u.values * gn, axis=0) * phi) * dv),
            -float(np.sum(np.sum(gn * gphi, axis=0)) * dv),
            float(np.sum(mf.chi(c) * n * np.sum(gc * gphi, axis=0)) * dv),
        ]
    if which == "moment":
        # weak form: the minimal-image weight is only Lipschitz on the torus
        w = moment_weight(s.grid).values
        gn = gradient(s.n).values
        drift = mf.chi(c) * n
        div_flux = sum(
            gradient(ScalarField(s.grid, drift * gc[i])).values[i] for i in range(s.grid.dim)
        )
        return float(np.sum(w * n) * dv), [
            -float(np.sum(w * np.sum(s.u.values * gn, axis=0)) * dv),
            float(np.sum(w * laplacian(s.n).values) * dv),
            -float(np.sum(w * div_flux) * dv),
        ]
    raise ValueError(f"unknown identity tag {which!r}; expected one of {IDENTITY_TAGS}")


def identity_residual(history: Sequence[State], which: str, mf: ModelFunctions,
                      pot: PotentialSpec, q: float = 2.0) -> ResidualSeries:
    """Residual of d/dt G = R along a uniformly sampled trajectory.

    The time derivative uses second-order centred differences inside and
    second-order one-sided stencils at the ends.  ``relative`` divides by the
    largest magnitude of any participating term over the whole series.
    """
    if which not in IDENTITY_TAGS:
        raise ValueError(f"unknown identity tag {which!r}; expected one of {IDENTITY_TAGS}")
    if len(history) < 3:
        raise ValueError("identity residuals need at least 3 snapshots")
    times = np.array([s.time for s in history])
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0):
        raise ValueError("identity residuals need uniformly spaced snapshots")
    G, terms = zip(*(_identity_terms(s, which, mf, pot, q) for s in history))
    G = np.array(G)
    terms = np.array(terms)
    dG = np.gradient(G, times, edge_order=2)
    R = terms.sum(axis=1)
    res = np.abs(dG - R)
    scale = float(max(np.abs(dG).max(), np.abs(terms).max()))
    rel = res / scale if scale > 0 else np.zeros_like(res)
    return ResidualSeries(which, times, dG, R, res, rel, scale)


def measure_order(series: Sequence[ResidualSeries], dts: Sequence[float]) -> float:
    """Log-log slope of the max residual at the times common to every series."""
    if len(series) != len(dts) or len(series) < 2:
        raise ValueError("need one residual series per time step, at least two")
    coarse = series[int(np.argmax(dts))].times
    maxima = []
    for sr in series:
        idx = [int(np.argmin(np.abs(sr.times - t))) for t in coarse]
        maxima.append(float(sr.absolute[idx].max()))
    slope = np.polyfit(np.log(dts), np.log(np.maximum(maxima, np.finfo(float).tiny)), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# blow-up monitor
# ---------------------------------------------------------------------------

@dataclass
class BlowupReport:
    completed: bool
    final_time: float
    acc_grad_c_inf: float
    serrin_acc: float
    x_m_initial: float
    x_m_max: float
    accumulators_finite: bool
    x_m_bounded: bool
    flag: str
    reference_acc_grad_c_inf: float | None = None
    acc_ratio: float | None = None
    threshold: float | None = None
    threshold_met: bool | None = None
    ordering_holds: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def blowup_monitor(records: Sequence[DiagnosticsRecord], *, completed: bool = True,
                   reference: Sequence[DiagnosticsRecord] | None = None,
                   threshold: float = 10.0, growth_limit: float = 1e3) -> BlowupReport:
    """Pair the criterion accumulators with the growth of the X_m norm."""
    last = records[-1]
    xm = np.array([r.x_m_norm for r in records])
    finite = bool(np.isfinite(last.acc_grad_c_inf) and np.isfinite(last.serrin_acc))
    bounded = bool(np.all(np.isfinite(xm)) and xm.max() <= growth_limit * max(xm[0], 1e-300))
    report = BlowupReport(
        completed=completed,
        final_time=last.time,
        acc_grad_c_inf=last.acc_grad_c_inf,
        serrin_acc=last.serrin_acc,
        x_m_initial=float(xm[0]),
        x_m_max=float(xm.max()),
        accumulators_finite=finite,
        x_m_bounded=bounded,
        flag="inconclusive",
    )
    if reference is not None:
        ref = reference[-1].acc_grad_c_inf
        report.reference_acc_grad_c_inf = ref
        report.acc_ratio = last.acc_grad_c_inf / ref if ref > 0 else math.inf
        report.threshold = threshold
        report.threshold_met = report.acc_ratio >= threshold
        report.ordering_holds = last.acc_grad_c_inf >= ref
    grew = report.acc_ratio is not None and report.acc_ratio >= threshold
    if completed and finite and bounded:
        report.flag = "criterion consistent"
    elif not completed and (grew or not bounded):
        report.flag = "blow-up suspected"
    return report


# ---------------------------------------------------------------------------
# energy-inequality audit
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    C0: float
    C1: float
    fit_residual: float
    passed: bool
    form: str
    lambda1: float
    dissipation: dict
    tolerance: float

    def to_dict(self) -> dict:
        return asdict(self)


def _envelope(X: np.ndarray, L: np.ndarray) -> tuple[float, float]:
    """Smallest (C0, C1 >= 0) line lying above the points (X_i, L_i)."""
    res = linprog(
        c=[len(X), float(X.sum())],
        A_ub=np.column_stack([-np.ones_like(X), -X]),
        b_ub=-L,
        bounds=[(None, None), (0.0, None)],
        method="highs",
    )
    if not res.success:
        return math.inf, math.inf
    return float(res.x[0]), float(res.x[1])


def inequality_audit(records: Sequence[DiagnosticsRecord], lambda1: float | None = None,
                     form: str = "2d", tolerance: float = 0.05) -> AuditReport:
    """Fit F(t) + int_0^t D <= C0 + C1 (t + int_0^t ||grad c||^2 + ||u||^2).

    The fit residual is a hold-out check: constants fitted on the first half of
    the samples must bound the second half, with the largest violation
    measured relative to max |F + int D|.
    """
    if len(records) < 4:
        raise ValueError("the audit needs at least 4 records")
    lam = records[0].lambda1 if lambda1 is None else lambda1
    t = np.array([r.time for r in records])
    get = lambda name: np.array([getattr(r, name) for r in records])
    mu = records[0].mu
    ent, gcs, kin, pc = get("entropy"), get("grad_c_sq"), get("kinetic"), get("potential_coupling")
    gsn, lcs, gus = get("grad_sqrt_n_sq"), get("lap_c_sq"), get("grad_u_sq")
    if form == "2d":
        F = ent + mu * gcs + lam * (kin + pc)
        D = gsn + 0.5 * mu * lcs + 0.5 * lam * gus
    elif form == "3d":
        F = lam * (kin + pc) + ent + 0.5 * gcs + get("moment")
        D = gus + gsn + lcs
    else:
        raise ValueError(f"unknown energy form {form!r}")
    L = F + cumulative_trapezoid(D, t, initial=0.0)
    X = t + cumulative_trapezoid(gcs + 2.0 * kin, t, initial=0.0)
    C0, C1 = _envelope(X, L)
    half = max(2, len(t) // 2)
    h0, h1 = _envelope(X[:half], L[:half])
    scale = float(np.abs(L).max())
    excess = L[half:] - (h0 + h1 * X[half:])
    fit_residual = float(max(excess.max(), 0.0) / scale) if scale > 0 else 0.0
    dissipation = {
        "grad_sqrt_n_sq": float(trapezoid(gsn, t)),
        "lap_c_sq": float(trapezoid(lcs, t)),
        "grad_u_sq": float(trapezoid(gus, t)),
    }
    passed = (math.isfinite(C1) and fit_residual <= tolerance
              and all(math.isfinite(v) for v in dissipation.values()))
    return AuditReport(C0, C1, fit_residual, bool(passed), form, float(lam), dissipation, tolerance)


# ---------------------------------------------------------------------------
# run-time invariant monitor
# ---------------------------------------------------------------------------

class ConservationMonitor:
    """Watch accepted states for the conservation and decay properties.

    Mass constancy, the maximum principle and monotone decay of ||c||_q for
    q in {1, 2, 4, inf}, and the positivity floor.  Violations accumulate as
    messages; nothing is raised here.
    """

    def __init__(self, s0: State, pos_tol: float = 1e-8, mass_rtol: float = 1e-10,
                 cinf_slack: float = 1e-6, cq_rtol: float = 1e-8, check_decay: bool = True):
        self.pos_tol = pos_tol
        self.mass_rtol = mass_rtol
        self.cinf_slack = cinf_slack
        self.cq_rtol = cq_rtol
        self.check_decay = check_decay
        self.mass0 = integral(s0.n)
        self.cmax0 = float(s0.c.values.max())
        self.prev = self._norms(s0)
        self.max_mass_drift = 0.0
        self.violations: list[str] = []
        self.observe(s0)

    @staticmethod
    def _norms(s: State) -> dict:
        return {q: lp_norm(s.c, q) for q in (1, 2, 4, math.inf)}

    def observe(self, s: State) -> None:
        t = s.time
        drift = abs(integral(s.n) - self.mass0)
        self.max_mass_drift = max(self.max_mass_drift, drift)
        if drift > self.mass_rtol * abs(self.mass0):
            self.violations.append(f"t={t:.6g}: mass drift {drift:.3e}")
        n_inf = float(np.abs(s.n.values).max())
        c_inf = float(np.abs(s.c.values).max())
        if s.n.values.min() < -self.pos_tol * n_inf:
            self.violations.append(f"t={t:.6g}: min n = {s.n.values.min():.3e}")
        if s.c.values.min() < -self.pos_tol * c_inf:
            self.violations.append(f"t={t:.6g}: min c = {s.c.values.min():.3e}")
        if not self.check_decay:
            return
        if s.c.values.max() > self.cmax0 + 1e-6 * (1.0 + self.cmax0):
            self.violations.append(f"t={t:.6g}: max c exceeds initial maximum")
        now = self._norms(s)
        for q, v in now.items():
            slack = self.cinf_slack if math.isinf(q) else self.cq_rtol * self.prev[q]
            if v > self.prev[q] + slack:
                self.violations.append(f"t={t:.6g}: ||c||_{q} increased by {v - self.prev[q]:.3e}")
        self.prev = now

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------------------
# CSV series
# ---------------------------------------------------------------------------

def write_series(path: str | Path, records: Iterable[DiagnosticsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(["%.17g" % getattr(r, name) for name in CSV_COLUMNS])


def read_series(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}
