import dataclasses
import math

import numpy as np
import pytest

from chemflow.diagnostics import (
    CSV_COLUMNS,
    IDENTITY_TAGS,
    ConservationMonitor,
    DiagnosticsConfig,
    DiagnosticsRecord,
    aa_cancellation,
    blowup_monitor,
    energy_functional,
    identity_residual,
    inequality_audit,
    measure_order,
    neg_entropy_bound_holds,
    neg_entropy_constant,
    read_series,
    record,
    write_series,
)
from chemflow.dynamics import State
from chemflow.fields import GridSpec, ScalarField, VectorField
from chemflow.model import build_model, gravity_potential, make_null_family, zero_potential
from chemflow.solver import StepConfig, full_rhs, integrate

# Frozen oracles.  Centered Gaussian exp(-|y|^2 / (2 sigma^2)), sigma = 0.5:
# entropy = -2 pi sigma^2 = -pi/2, moment from mpmath quadrature over R^2.
GAUSS_ENTROPY = -1.5707963267948966
GAUSS_MOMENT = 1.9017389455899329
# n = 1, c = 0.5 + 0.1 sin x1, mu = 2: F = 2 int |grad c|^2 = 0.04 pi^2
ENERGY_EXAMPLE = 0.39478417604357435
# int exp(-|y|/2) over [-pi, pi]^2 (scipy dblquad)
NEG_ENTROPY_CONSTANT = 13.162759742566


def _const_state(grid, n, c):
    return State(ScalarField.constant(grid, n), ScalarField.constant(grid, c), VectorField.zeros(grid))


def _gaussian_state(n):
    g = GridSpec(2, n)
    y2 = sum((x - c) ** 2 for x, c in zip(g.coords, g.center))
    return State(ScalarField(g, np.exp(-y2 / 0.5)), ScalarField.constant(g, 1.0), VectorField.zeros(g))


def _run(setup, t_end, dt, cfg=DiagnosticsConfig()):
    _, mf, pot, s0 = setup
    history = [s0]
    integrate(s0, full_rhs(mf, pot), t_end, StepConfig(dt=dt), on_step=history.append)
    recs = [record(history[0], mf, pot, cfg)]
    for s in history[1:]:
        recs.append(record(s, mf, pot, cfg, recs[-1]))
    return history, recs


@pytest.fixture(scope="module")
def short_run(drop_setup):
    return _run(drop_setup, 0.3, 5e-3)


class TestRecord:
    def test_uniform_density(self):
        g = GridSpec(2, 32)
        r = record(_const_state(g, 1.0, 0.4), make_null_family(), zero_potential(g))
        assert r.entropy == 0.0
        assert r.mass == pytest.approx(4 * math.pi**2, rel=1e-14)
        assert r.grad_sqrt_n_sq == 0.0

    def test_constant_oxygen(self):
        g = GridSpec(2, 32)
        r = record(_const_state(g, 1.0, 0.4), make_null_family(), zero_potential(g))
        assert r.grad_c_inf == 0.0
        assert r.c_linf == 0.4

    def test_gaussian_oracle(self):
        s = _gaussian_state(128)
        r = record(s, make_null_family(), zero_potential(s.grid))
        assert r.entropy == pytest.approx(GAUSS_ENTROPY, rel=1e-6)
        assert r.moment == pytest.approx(GAUSS_MOMENT, rel=1e-6)
        assert r.mass == pytest.approx(math.pi / 2, rel=1e-8)  # tail outside the cell ~1e-9

    def test_refined_grid_agreement(self):
        coarse, fine = _gaussian_state(64), _gaussian_state(256)
        a = record(coarse, make_null_family(), zero_potential(coarse.grid))
        b = record(fine, make_null_family(), zero_potential(fine.grid))
        assert a.entropy == pytest.approx(b.entropy, rel=1e-6)
        assert a.moment == pytest.approx(b.moment, rel=1e-6)

    def test_accumulators_trapezoid(self, short_run):
        _, recs = short_run
        acc = [r.acc_grad_c_inf for r in recs]
        assert acc[0] == 0.0 and all(b >= a for a, b in zip(acc, acc[1:]))
        t = np.array([r.time for r in recs])
        g2 = np.array([r.grad_c_inf for r in recs]) ** 2
        assert acc[-1] == pytest.approx(float(np.sum(0.5 * np.diff(t) * (g2[1:] + g2[:-1]))), rel=1e-12)

    def test_serrin_pair_validated(self):
        with pytest.raises(ValueError):
            DiagnosticsConfig(serrin_p=4, serrin_q=4)

    def test_taylor_green_no_oxygen_gradient(self):
        g = GridSpec(2, 32)
        x, y = g.coords
        z = ScalarField.zeros(g)
        s0 = State(z, z, VectorField.from_arrays(g, [np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)]))
        mf, pot = make_null_family(), zero_potential(g)
        recs = [record(s0, mf, pot)]
        integrate(s0, full_rhs(mf, pot), 0.05, StepConfig(dt=0.01),
                  on_step=lambda s: recs.append(record(s, mf, pot, DiagnosticsConfig(), recs[-1])))
        assert all(r.acc_grad_c_inf == 0.0 for r in recs)
        assert recs[-1].serrin_acc > 0


class TestEnergy:
    def test_trivial(self):
        g = GridSpec(2, 32)
        assert energy_functional(_const_state(g, 1.0, 0.3), build_model("step"), zero_potential(g)) == 0.0

    def test_closed_form(self):
        g = GridSpec(2, 64)
        c = ScalarField(g, 0.5 + 0.1 * np.sin(g.coords[0]))
        s = State(ScalarField.constant(g, 1.0), c, VectorField.zeros(g))
        F = energy_functional(s, build_model("step", mu=2.0), zero_potential(g))
        assert F == pytest.approx(ENERGY_EXAMPLE, rel=1e-12)

    def test_linear_in_lambda(self, drop_setup):
        g, mf, pot, s0 = drop_setup
        y = g.coords[1]
        s = State(s0.n, s0.c, VectorField.from_arrays(g, [np.sin(y), np.zeros(g.shape)]))
        lam = 0.7
        kin = 0.5 * float(np.sum(s.u.values ** 2)) * g.cell_volume
        pc = float(np.sum(s.n.values * pot.phi.values)) * g.cell_volume
        diff = energy_functional(s, mf, pot, 2 * lam) - energy_functional(s, mf, pot, lam)
        assert diff == pytest.approx(lam * (kin + pc), rel=1e-12)

    def test_unknown_form(self, drop_setup):
        _, mf, pot, s0 = drop_setup
        with pytest.raises(ValueError):
            energy_functional(s0, mf, pot, form="4d")


class TestIdentities:
    def test_steady_state_all_zero(self):
        g = GridSpec(2, 32)
        s = _const_state(g, 0.8, 0.6)
        hist = [s.at(t) for t in (0.0, 0.1, 0.2, 0.3)]
        for tag in IDENTITY_TAGS:
            sr = identity_residual(hist, tag, make_null_family(), gravity_potential(g))
            assert np.all(sr.absolute <= 1e-12)

    def test_heat_cq_second_order(self):
        g = GridSpec(2, 32)
        x, y = g.coords
        s0 = State(ScalarField(g, 1 + 0.5 * np.sin(x)), ScalarField(g, 1 + 0.5 * np.cos(x + y)),
                   VectorField.zeros(g))
        mf, pot = make_null_family(), zero_potential(g)
        series, dts = [], (0.04, 0.02, 0.01)
        for dt in dts:
            hist = [s0]
            integrate(s0, full_rhs(mf, pot), 0.4, StepConfig(dt=dt), on_step=hist.append)
            series.append(identity_residual(hist, "cq", mf, pot, q=2))
        assert measure_order(series, dts) == pytest.approx(2.0, abs=0.1)

    def test_drop_residuals_small(self, short_run, drop_setup):
        _, mf, pot, _ = drop_setup
        hist, _ = short_run
        for tag in IDENTITY_TAGS:
            assert identity_residual(hist, tag, mf, pot).relative.max() <= 1e-2

    def test_rejects_short_or_unknown(self, short_run, drop_setup):
        _, mf, pot, _ = drop_setup
        hist, _ = short_run
        with pytest.raises(ValueError):
            identity_residual(hist[:2], "cq", mf, pot)
        with pytest.raises(ValueError):
            identity_residual(hist, "vorticity", mf, pot)


class TestBounds:
    def test_neg_entropy_constant(self):
        assert neg_entropy_constant(GridSpec(2, 256)) == pytest.approx(NEG_ENTROPY_CONSTANT, rel=1e-4)

    def test_neg_entropy_bound(self, short_run, drop_setup):
        g = drop_setup[0]
        assert all(neg_entropy_bound_holds(r, g) for r in short_run[1])

    def test_aa_cancellation(self, short_run, drop_setup):
        _, mf, _, _ = drop_setup
        for s in short_run[0][::10]:
            val, bound = aa_cancellation(s, mf)
            assert val <= bound


class TestBlowupMonitor:
    def test_completed_run_consistent(self, short_run):
        rep = blowup_monitor(short_run[1])
        assert rep.flag == "criterion consistent"
        assert rep.accumulators_finite and rep.x_m_bounded

    def test_aborted_with_growth(self, short_run):
        recs = short_run[1]
        ref = [dataclasses.replace(r, acc_grad_c_inf=r.acc_grad_c_inf / 20) for r in recs]
        rep = blowup_monitor(recs, completed=False, reference=ref, threshold=10)
        assert rep.flag == "blow-up suspected"
        assert rep.ordering_holds and rep.threshold_met
        assert rep.acc_ratio == pytest.approx(20.0)

    def test_aborted_without_growth(self, short_run):
        rep = blowup_monitor(short_run[1], completed=False, reference=short_run[1])
        assert rep.flag == "inconclusive"


class TestAudit:
    def test_steady_state(self):
        g = GridSpec(2, 32)
        s = _const_state(g, 1.0, 0.5)
        mf, pot = make_null_family(), zero_potential(g)
        recs = [record(s.at(t), mf, pot) for t in np.linspace(0, 1, 6)]
        rep = inequality_audit(recs)
        assert rep.C1 == pytest.approx(0.0, abs=1e-12)
        assert all(v == 0.0 for v in rep.dissipation.values())
        assert rep.passed

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_lambda_sweep(self, short_run, lam):
        rep = inequality_audit(short_run[1], lambda1=lam)
        assert rep.passed and math.isfinite(rep.C1) and rep.C1 >= 0

    def test_three_d_form(self, short_run):
        assert inequality_audit(short_run[1], form="3d").passed

    def test_detects_growth(self, short_run):
        recs = [dataclasses.replace(r, entropy=r.entropy + 50 * math.exp(20 * r.time)) for r in short_run[1]]
        assert not inequality_audit(recs).passed

    def test_needs_records(self, short_run):
        with pytest.raises(ValueError):
            inequality_audit(short_run[1][:3])


class TestMonitor:
    def test_clean_run(self, short_run):
        hist = short_run[0]
        mon = ConservationMonitor(hist[0])
        for s in hist[1:]:
            mon.observe(s)
        assert mon.ok and mon.max_mass_drift <= 1e-10 * mon.mass0

    def test_flags_mass_and_growth(self, drop_setup):
        s0 = drop_setup[3]
        mon = ConservationMonitor(s0)
        mon.observe(State(s0.n * 1.01, s0.c * 1.1, s0.u, 0.1))
        text = " ".join(mon.violations)
        assert "mass drift" in text and "||c||_2" in text and "max c" in text

    def test_flags_negative_density(self, drop_setup):
        s0 = drop_setup[3]
        mon = ConservationMonitor(s0)
        mon.observe(State(s0.n - 1.0, s0.c, s0.u, 0.1))
        assert any("min n" in v for v in mon.violations)


class TestSeries:
    def test_columns(self):
        names = [f.name for f in dataclasses.fields(DiagnosticsRecord)]
        assert list(CSV_COLUMNS) == [n for n in names if n != "serrin_rate"]

    def test_roundtrip_exact(self, short_run, tmp_path):
        recs = short_run[1]
        path = tmp_path / "s.csv"
        write_series(path, recs)
        data = read_series(path)
        assert list(data) == list(CSV_COLUMNS)
        for name in CSV_COLUMNS:
            assert np.array_equal(data[name], [getattr(r, name) for r in recs])
