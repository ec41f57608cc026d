import math

import numpy as np
import pytest

from chemflow.dynamics import (
    State,
    check_state,
    pressure_recover,
    rhs_full,
    rhs_linearized,
    rhs_regularized,
    rhs_vorticity2d,
    velocity_from_vorticity,
)
from chemflow.errors import NonFiniteError
from chemflow.fields import (
    GridSpec,
    ScalarField,
    VectorField,
    curl,
    divergence,
    integral,
    inner,
    laplacian,
    lp_norm,
)
from chemflow.model import (
    ModelFunctions,
    build_model,
    gravity_potential,
    make_null_family,
    radial_potential,
    zero_potential,
)

from conftest import band_limited_state

G = GridSpec(2, 48)


def _const_state(grid, n, c):
    return State(ScalarField.constant(grid, n), ScalarField.constant(grid, c), VectorField.zeros(grid))


def _norm(t):
    return lp_norm(t.dn) + lp_norm(t.dc) + lp_norm(t.du)


def _diff(a, b):
    return lp_norm(a.dn - b.dn) + lp_norm(a.dc - b.dc) + lp_norm(a.du - b.du)


def _taylor_green(grid):
    x, y = grid.coords[:2]
    u = VectorField.from_arrays(grid, [np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])
    z = ScalarField.zeros(grid)
    return State(z, z, u)


class TestRhsFull:
    def test_constant_state(self):
        mf = build_model("step", mu=2.0)
        t = rhs_full(_const_state(G, 0.7, 0.5), mf, gravity_potential(G))
        assert lp_norm(t.dn, math.inf) <= 1e-14
        np.testing.assert_allclose(t.dc.values, -float(mf.k(0.5)) * 0.7, atol=1e-14)
        assert lp_norm(t.du, math.inf) <= 1e-13

    def test_no_consumption_without_oxygen(self):
        mf = build_model("rational")
        rng = np.random.default_rng(1)
        s = band_limited_state(G, rng)
        s = State(s.n, ScalarField.zeros(G), VectorField.zeros(G))
        t = rhs_full(s, mf, zero_potential(G))
        assert lp_norm(t.dc, math.inf) <= 1e-14

    def test_decoupled_heat_modes(self):
        rng = np.random.default_rng(2)
        s = band_limited_state(G, rng)
        s = State(s.n, s.c, VectorField.zeros(G))
        t = rhs_full(s, make_null_family(), zero_potential(G))
        for f, df in ((s.n, t.dn), (s.c, t.dc)):
            np.testing.assert_allclose(df.spectral, -G.k2 * f.spectral, atol=1e-12)

    def test_nonfinite_term_named(self):
        bad = lambda c: np.full_like(np.asarray(c, dtype=float), np.nan)
        mf = ModelFunctions(chi=bad, k=lambda c: 0 * c, chi_prime=bad, k_prime=lambda c: 0 * c, mu=1.0)
        s = band_limited_state(G, np.random.default_rng(3))
        with pytest.raises(NonFiniteError, match="chi"):
            rhs_full(s, mf, zero_potential(G))


class TestInvariants:
    @pytest.fixture(scope="class")
    @classmethod
    def cases(cls):
        rng = np.random.default_rng(4)
        out = []
        for dim, n in ((2, 48), (3, 16)):
            g = GridSpec(dim, n)
            s = band_limited_state(g, rng)
            out.append((s, band_limited_state(g, rng), build_model("step", mu=2.0), radial_potential(g)))
        return out

    def _variants(self, s, frozen, mf, pot):
        yield rhs_full(s, mf, pot)
        yield rhs_regularized(s, mf, pot, 20, 0.1)
        yield rhs_linearized(s, frozen, mf, pot)

    def test_mass_form(self, cases):
        for s, frozen, mf, pot in cases:
            scale = 1 + lp_norm(s.n) + lp_norm(s.c) + lp_norm(s.u)
            for t in self._variants(s, frozen, mf, pot):
                assert abs(integral(t.dn)) <= 1e-12 * scale

    def test_divergence_free(self, cases):
        for s, frozen, mf, pot in cases:
            for t in self._variants(s, frozen, mf, pot):
                assert lp_norm(divergence(t.du), math.inf) <= 1e-12

    def test_aa_cancellation(self, cases):
        for s, _, mf, _ in cases:
            c = s.c.values
            val = inner((s.c.map(lambda v: mf.chi(v) - mf.mu * mf.k(v))) * laplacian(s.c), s.n)
            assert val == 0.0
            assert np.all(mf.chi(c) - mf.mu * mf.k(c) == 0.0)

    def test_regularization_consistency(self):
        rng = np.random.default_rng(5)
        g = GridSpec(2, 64)
        s = band_limited_state(g, rng, kmax=20)
        mf, pot = build_model("step", mu=2.0), gravity_potential(g)
        full = rhs_full(s, mf, pot)
        errs = [_diff(rhs_regularized(s, mf, pot, k, e), full)
                for k, e in ((16, 0.2), (64, 0.1), (256, 0.05))]
        assert errs[0] > errs[1] > errs[2]


class TestRhsRegularized:
    def test_limit_matches_full(self):
        rng = np.random.default_rng(6)
        s = band_limited_state(G, rng)
        mf, pot = build_model("step", mu=2.0), gravity_potential(G)
        k = 2 * (G.points / 3) ** 2  # the ball then contains the whole dealiased square
        diff = _diff(rhs_regularized(s, mf, pot, k, 1e-9), rhs_full(s, mf, pot))
        assert diff <= 1e-10 * (1 + _norm(rhs_full(s, mf, pot)))

    def test_constant_state(self):
        mf, pot = build_model("step", mu=2.0), gravity_potential(G)
        s = _const_state(G, 0.7, 0.5)
        assert _diff(rhs_regularized(s, mf, pot, 10, 0.1), rhs_full(s, mf, pot)) <= 1e-12

    def test_mode_outside_ball_is_inert(self):
        y = G.coords[1]
        base = band_limited_state(G, np.random.default_rng(7), kmax=4)
        extra = VectorField.from_arrays(G, [np.sin(5 * y), np.zeros(G.shape)])  # |xi|^2 = 25
        s2 = State(base.n, base.c, base.u + extra)
        mf, pot = build_model("step", mu=2.0), gravity_potential(G)
        a = rhs_regularized(base, mf, pot, 24, 0.1)
        b = rhs_regularized(s2, mf, pot, 24, 0.1)
        assert lp_norm(a.du - b.du, math.inf) <= 1e-13 * (1 + lp_norm(a.du, math.inf))


class TestRhsLinearized:
    def test_fixed_point(self):
        mf, pot = build_model("step", mu=2.0), gravity_potential(G)
        s = _const_state(G, 0.4, 0.9)
        assert _diff(rhs_linearized(s, s, mf, pot), rhs_full(s, mf, pot)) <= 1e-14

    def test_same_state_equals_full(self):
        s = band_limited_state(G, np.random.default_rng(8))
        mf, pot = build_model("rational", mu=1.5), radial_potential(G)
        assert _diff(rhs_linearized(s, s, mf, pot), rhs_full(s, mf, pot)) <= 1e-12

    def test_pure_heat(self):
        rng = np.random.default_rng(9)
        new = band_limited_state(G, rng)
        frozen = State(new.n, new.c, VectorField.zeros(G))
        t = rhs_linearized(new, frozen, make_null_family(), zero_potential(G))
        np.testing.assert_allclose(t.dn.spectral, -G.k2 * new.n.spectral, atol=1e-12)

    def test_grid_mismatch(self):
        a = _const_state(G, 1, 1)
        b = _const_state(GridSpec(2, 32), 1, 1)
        with pytest.raises(ValueError):
            rhs_linearized(a, b, make_null_family(), zero_potential(G))


class TestVorticity:
    def test_constant_density_no_forcing(self):
        g = GridSpec(2, 32)
        n = ScalarField.constant(g, 3.0)
        omega = ScalarField.zeros(g)
        assert lp_norm(rhs_vorticity2d(omega, n, gravity_potential(g)), math.inf) <= 1e-14

    def test_cellular_flow_decays(self):
        g = GridSpec(2, 32)
        x, y = g.coords
        omega = ScalarField(g, 2 * np.cos(x) * np.cos(y))
        out = rhs_vorticity2d(omega, ScalarField.zeros(g), zero_potential(g))
        np.testing.assert_allclose(out.values, -4 * np.cos(x) * np.cos(y), atol=1e-13)

    def test_velocity_recovers_curl(self):
        rng = np.random.default_rng(10)
        s = band_limited_state(G, rng)
        omega = curl(s.u)
        u = velocity_from_vorticity(omega)
        u_mean_free = VectorField([ScalarField(G, spectral=np.where(G.k2 == 0, 0, c.spectral)) for c in s.u])
        assert lp_norm(u - u_mean_free, math.inf) <= 1e-12

    def test_matches_curl_of_velocity_equation(self):
        rng = np.random.default_rng(11)
        s = band_limited_state(G, rng)
        u = velocity_from_vorticity(curl(s.u))
        s = State(s.n, s.c, u)
        pot = gravity_potential(G)
        t = rhs_full(s, make_null_family(), pot)
        out = rhs_vorticity2d(curl(u), s.n, pot)
        assert lp_norm(curl(t.du) - out, math.inf) <= 1e-10

    def test_mean_rejected(self):
        g = GridSpec(2, 32)
        with pytest.raises(ValueError):
            rhs_vorticity2d(ScalarField.constant(g, 1.0), ScalarField.zeros(g), zero_potential(g))


class TestPressure:
    def test_zero_state(self):
        s = _const_state(G, 0.0, 0.0)
        assert lp_norm(pressure_recover(s, make_null_family(), zero_potential(G)), math.inf) == 0.0

    def test_hydrostatic(self):
        g = GridSpec(2, 32)
        nbar, a = 0.8, 1.5
        pot = gravity_potential(g, a)
        p = pressure_recover(_const_state(g, nbar, 0.0), make_null_family(), pot)
        np.testing.assert_allclose(p.values, nbar * a * np.cos(g.coords[1]), atol=1e-12)

    def test_taylor_green(self):
        g = GridSpec(2, 32)
        s = _taylor_green(g)
        p = pressure_recover(s, make_null_family(), zero_potential(g))
        x, y = g.coords
        expected = 0.25 * (np.cos(2 * x) + np.cos(2 * y))
        np.testing.assert_allclose(p.values, expected, atol=1e-12)
        # residual of -Lap p = div(u . grad u)
        from chemflow.operators import advect_vector
        res = -laplacian(p) - divergence(advect_vector(s.u, s.u))
        assert lp_norm(res, math.inf) <= 1e-10


class TestCheckState:
    def test_valid(self):
        assert check_state(band_limited_state(G, np.random.default_rng(12))) == []

    def test_negative_density(self):
        s = _const_state(G, -0.1, 1.0)
        assert any("min n" in p for p in check_state(s))

    def test_divergent_velocity(self):
        x = G.coords[0]
        u = VectorField.from_arrays(G, [np.sin(x), np.zeros(G.shape)])
        s = State(ScalarField.constant(G, 1.0), ScalarField.constant(G, 1.0), u)
        assert any("divergence" in p for p in check_state(s))
