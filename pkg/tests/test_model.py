import numpy as np
import pytest

from chemflow.fields import GridSpec, ScalarField, gradient
from chemflow.model import (
    ModelFunctions,
    build_model,
    build_potential,
    cancellation_field,
    gravity_potential,
    make_null_family,
    make_rational_family,
    make_step_family,
    radial_potential,
    validate_assumptions,
    zero_potential,
)

# k(c* + 20 delta) for kappa1=1, c*=0.3, delta=0.1, evaluated independently
STEP_TAIL = 0.9999999978362275


class TestFamilies:
    def test_rational_half_point(self):
        mf = make_rational_family(1.0, 0.3, 1.0)
        assert float(mf.k(0.3)) == pytest.approx(0.5, rel=1e-15)

    def test_rational_monotone(self):
        mf = make_rational_family(1.0, 0.3, 1.0)
        assert mf.k_prime(np.linspace(0, 1, 1001)).min() > 0

    def test_step_tail(self):
        mf = make_step_family(1.0, 0.3, 0.1, 1.0)
        val = float(mf.k(0.3 + 20 * 0.1))
        assert val == pytest.approx(STEP_TAIL, abs=1e-14)
        assert abs(val - 1.0) < 1e-6

    def test_step_zero_at_origin(self):
        assert float(make_step_family(1.0, 0.3, 0.1, 2.0).k(0.0)) == 0.0

    def test_wide_step_monotone(self):
        mf = make_step_family(1.0, 0.3, 3.0, 1.0)
        assert mf.k_prime(np.linspace(0, 10, 10001)).min() >= 0

    def test_step_derivative_matches_difference(self):
        mf = make_step_family(1.0, 0.3, 0.1, 2.0)
        c = np.linspace(0.01, 1.0, 50)
        h = 1e-6
        fd = (mf.k(c + h) - mf.k(c - h)) / (2 * h)
        np.testing.assert_allclose(mf.k_prime(c), fd, rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("args", [(0, 0.3, 0.1, 1), (1, 0.3, 0.0, 1), (1, -1, 0.1, 1)])
    def test_step_rejects(self, args):
        with pytest.raises(ValueError):
            make_step_family(*args)

    def test_rational_rejects(self):
        with pytest.raises(ValueError):
            make_rational_family(1.0, 0.0, 1.0)

    def test_mu_positive(self):
        z = lambda c: c
        with pytest.raises(ValueError):
            ModelFunctions(z, z, z, z, 0.0)

    def test_build_model_unknown(self):
        with pytest.raises(ValueError):
            build_model("cubic")


class TestAssumptions:
    @pytest.mark.parametrize("family", ["rational", "step"])
    def test_builtin_families(self, family):
        rep = validate_assumptions(build_model(family, mu=2.0), 2.0)
        assert rep.AA_holds and rep.A_deviation == 0.0
        assert rep.B_violations == [] and rep.k_zero_at_origin

    def test_perturbed_step(self):
        mf = build_model("step", 1.0, 0.3, 0.1, 2.0, chi_perturbation=0.01)
        rep = validate_assumptions(mf, 1.0)
        assert rep.A_deviation == pytest.approx(0.01, abs=1e-6)
        assert not rep.AA_holds

    def test_k_nonzero_at_origin(self):
        k = lambda c: 0.1 + np.asarray(c, dtype=float)
        one = lambda c: np.ones_like(np.asarray(c, dtype=float))
        mf = ModelFunctions(chi=k, k=k, chi_prime=one, k_prime=one, mu=1.0)
        assert not validate_assumptions(mf, 1.0).k_zero_at_origin

    def test_decreasing_chi_flagged(self):
        k = lambda c: -np.asarray(c, dtype=float)
        neg = lambda c: -np.ones_like(np.asarray(c, dtype=float))
        mf = ModelFunctions(chi=k, k=k, chi_prime=neg, k_prime=neg, mu=1.0)
        assert len(validate_assumptions(mf, 1.0).B_violations) > 0

    def test_cancellation_exact(self, rng):
        g = GridSpec(2, 32)
        c = ScalarField(g, rng.uniform(0, 3, g.shape))
        for family in ("rational", "step"):
            mf = build_model(family, mu=2.5)
            assert np.all(cancellation_field(mf, c).values == 0.0)

    def test_scaled_chi_keeps_cancellation(self):
        mf = build_model("step", mu=2.0).scaled_chi(50.0)
        c = np.linspace(0, 2, 300)
        assert mf.mu == 100.0
        assert np.all(mf.chi(c) - mf.mu * mf.k(c) == 0.0)

    def test_null_family(self):
        mf = make_null_family()
        assert np.all(mf.k(np.linspace(0, 1, 5)) == 0)
        assert mf.family["name"] == "none"


class TestPotentials:
    @pytest.mark.parametrize("make", [gravity_potential, radial_potential])
    def test_gradient_consistent(self, make):
        g = GridSpec(2, 64)
        pot = make(g, 1.0)
        spectral = gradient(pot.phi)
        for a, b in zip(spectral, pot.grad_phi):
            np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    def test_nonnegative(self):
        g = GridSpec(3, 16)
        for kind in ("zero", "gravity", "radial"):
            assert build_potential(g, kind).phi.values.min() >= 0

    def test_sup_bounds(self):
        g = GridSpec(2, 64)
        pot = gravity_potential(g, 2.0)
        assert pot.sup_bounds[0] == pytest.approx(4.0, rel=1e-12)
        assert pot.sup_bounds[1] == pytest.approx(2.0, rel=1e-3)

    def test_zero_kind(self):
        assert zero_potential(GridSpec(2, 16)).kind == "zero"

    def test_rejects_negative_amplitude(self):
        with pytest.raises(ValueError):
            gravity_potential(GridSpec(2, 16), -1.0)
