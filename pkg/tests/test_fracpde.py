import math

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.linalg import splu

from conftest import make_coeffs
from levyswarm.coefficients import ModelParams, closure_coeffs
from levyswarm.fracpde import (
    CoverageAccumulator,
    SingularMobility,
    SolverConfig,
    apply_generator,
    coverage,
    coverage_from_series,
    covered_mass,
    divergence,
    frac_gradient,
    frac_laplacian,
    initial_condition,
    initial_mass,
    running_time_average,
    solve,
    step_implicit,
    support_radius,
)
from levyswarm.grid import Grid2D


def mode(grid, k=(2, 0)):
    X, Y = grid.mesh()
    return np.cos(k[0] * X + k[1] * Y)


class TestOperators:
    def test_constant_has_zero_gradient(self, periodic_2pi):
        gx, gy = frac_gradient(np.full(periodic_2pi.shape, 3.7), 1.5, periodic_2pi)
        assert np.abs(gx).max() < 1e-14 and np.abs(gy).max() < 1e-14

    def test_classical_derivative(self, periodic_2pi):
        X, _ = periodic_2pi.mesh()
        gx, gy = frac_gradient(np.cos(3 * X), 2.0, periodic_2pi)
        np.testing.assert_allclose(gx, -3 * np.sin(3 * X), atol=1e-12)
        assert np.abs(gy).max() < 1e-12

    def test_fractional_single_mode(self, periodic_2pi):
        X, _ = periodic_2pi.mesh()
        gx, _ = frac_gradient(np.cos(2 * X), 1.5, periodic_2pi)
        np.testing.assert_allclose(gx, -(2**0.5) * np.sin(2 * X), atol=1e-13)

    @pytest.mark.parametrize("alpha", [1.3, 1.5, 1.9])
    def test_generator_eigenvalue(self, periodic_2pi, alpha):
        u = mode(periodic_2pi, (2, 1))
        lam = -(5 ** (alpha / 2))
        for mode_name in ("constant", "nonlinear"):
            out = apply_generator(u, make_coeffs(), mode_name, alpha, periodic_2pi)
            np.testing.assert_allclose(out, lam * u, atol=1e-12)

    def test_eigenvalue_hand_value(self, periodic_2pi):
        u = mode(periodic_2pi)
        out = apply_generator(u, make_coeffs(), "constant", 1.5, periodic_2pi)
        np.testing.assert_allclose(out, -(2**1.5) * u, atol=1e-12)
        assert -(2**1.5) == pytest.approx(-2.82843, abs=1e-5)

    def test_generator_integrates_to_zero(self, rng):
        for bc in ("periodic", "neumann_mirror"):
            g = Grid2D(32, 48, 3.0, 5.0, bc)
            u = 1.0 + rng.random(g.shape)
            out = apply_generator(u, make_coeffs(f_slope=0.5), "nonlinear", 1.4, g)
            assert abs(g.integrate(out)) < 1e-12 * g.integrate(np.abs(out))

    def test_composition_matches_laplacian(self, periodic_2pi):
        # band-limited field: odd derivatives drop the Nyquist mode by design
        g = periodic_2pi
        u = mode(g, (3, 1)) + 0.3 * mode(g, (0, 7)) + 2.0
        gx, gy = frac_gradient(u, 1.6, g)
        np.testing.assert_allclose(divergence(gx, gy, g), frac_laplacian(u, 1.6, g), atol=1e-10)

    def test_real_output_for_real_input(self, rng):
        g = Grid2D(32, 32, 1.0, 1.0)
        u = rng.random(g.shape)
        gx, _ = frac_gradient(u, 1.5, g)
        assert gx.dtype == float and np.all(np.isfinite(gx))

    def test_singular_mobility(self, periodic_2pi):
        c = make_coeffs(f_slope=1.0)
        with pytest.raises(SingularMobility):
            apply_generator(np.full(periodic_2pi.shape, -2.0), c, "nonlinear", 1.5, periodic_2pi)


class TestStepping:
    def test_amplification_factor(self, periodic_2pi):
        u = mode(periodic_2pi, (1, 0))
        cfg = SolverConfig(dt=0.1, t_end=0.1, coeffs=make_coeffs(), alpha=1.5, mobility_mode="constant")
        out = step_implicit(u, cfg, periodic_2pi)
        np.testing.assert_allclose(out, u / 1.1, atol=1e-15)
        assert 1 / 1.1 == pytest.approx(0.909091, abs=1e-6)

    def test_nonlinear_path_same_factor_for_constant_mobility(self, periodic_2pi):
        u = mode(periodic_2pi, (1, 2))
        cfg = SolverConfig(dt=0.1, t_end=0.1, coeffs=make_coeffs(), alpha=1.5, linear_solver_tol=1e-13)
        out = step_implicit(u, cfg, periodic_2pi)
        np.testing.assert_allclose(out, u / (1 + 0.1 * 5**0.75), atol=1e-12)

    def test_constant_field_fixed(self, periodic_2pi):
        u = np.full(periodic_2pi.shape, 0.37)
        cfg = SolverConfig(dt=1.0, t_end=1.0, coeffs=make_coeffs(f_slope=1.0), alpha=1.3)
        np.testing.assert_array_equal(step_implicit(u, cfg, periodic_2pi), u)

    def test_zero_horizon(self, periodic_2pi):
        u = mode(periodic_2pi)
        traj = solve(u, SolverConfig(dt=0.1, t_end=0.0, coeffs=make_coeffs(), alpha=1.5), periodic_2pi)
        assert traj.times == [0.0] and len(traj.fields) == 1
        np.testing.assert_array_equal(traj.final, u)

    def test_storage_keeps_endpoints(self, periodic_2pi):
        cfg = SolverConfig(dt=0.1, t_end=1.05, coeffs=make_coeffs(), alpha=1.5, mobility_mode="constant",
                           store_every=4)
        traj = solve(1 + mode(periodic_2pi), cfg, periodic_2pi)
        assert traj.steps == [0, 4, 8, 11]
        assert traj.times[-1] == pytest.approx(1.05)

    def test_first_order_convergence(self, periodic_2pi):
        u0 = mode(periodic_2pi, (1, 1))
        lam = 2**0.75
        exact = math.exp(-lam * 1.0)
        errs = []
        for dt in (0.1, 0.05, 0.025):
            cfg = SolverConfig(dt=dt, t_end=1.0, coeffs=make_coeffs(), alpha=1.5, mobility_mode="constant")
            errs.append(np.abs(solve(u0, cfg, periodic_2pi).final - exact * u0).max())
        for e1, e2 in zip(errs, errs[1:]):
            assert e1 / e2 == pytest.approx(2.0, abs=0.2)

    def test_long_time_uniform_limit(self):
        g = Grid2D(32, 32, 2 * np.pi, 2 * np.pi)
        u0 = 1 + 0.5 * mode(g, (1, 0)) + 0.2 * mode(g, (3, 2))
        t_end = 20.0  # slowest decay rate is 1
        cfg = SolverConfig(dt=0.5, t_end=t_end, coeffs=make_coeffs(), alpha=1.7, mobility_mode="constant")
        final = solve(u0, cfg, g).final
        # implicit Euler decays the slow mode by (1 + dt)^-40, still far below 1e-6
        assert np.abs(final - u0.mean()).max() <= 1e-6
        assert g.integrate(final) == pytest.approx(g.integrate(u0), rel=1e-13)

    @pytest.mark.parametrize("bc", ["periodic", "neumann_mirror"])
    @pytest.mark.parametrize("mob", ["constant", "nonlinear"])
    def test_mass_conserved(self, bc, mob):
        params = ModelParams(alpha=1.3)
        g = Grid2D(50, 40, 200.0, 160.0, bc)
        u0 = initial_condition(g, 7.5, 20)
        cfg = SolverConfig(dt=1.0, t_end=20.0, coeffs=closure_coeffs(params), alpha=1.3, mobility_mode=mob)
        traj = solve(u0, cfg, g)
        assert traj.stats["max_relative_mass_drift"] <= 1e-12
        assert traj.stats["max_linear_residual"] <= cfg.linear_solver_tol * np.linalg.norm(u0) * 1.0001

    def test_mirror_equivariance(self):
        params = ModelParams(alpha=1.5)
        g = Grid2D(50, 40, 200.0, 160.0, "neumann_mirror")
        u0 = initial_condition(g, 7.5, 20, centers=[(60.0, 70.0)])
        cfg = SolverConfig(dt=1.0, t_end=5.0, coeffs=closure_coeffs(params), alpha=1.5, linear_solver_tol=1e-13)
        a = solve(u0, cfg, g).final[::-1, :]
        b = solve(u0[::-1, :].copy(), cfg, g).final
        assert np.abs(a - b).max() <= 1e-10 * np.abs(a).max()

    def test_modes_decay_monotonically(self, rng):
        g = Grid2D(32, 32, 1.0, 1.0)
        u = rng.random(g.shape)
        cfg = SolverConfig(dt=0.01, t_end=0.01, coeffs=make_coeffs(0.1), alpha=1.5, mobility_mode="constant")
        prev = np.abs(np.fft.fft2(u))
        for _ in range(10):
            u = step_implicit(u, cfg, g)
            cur = np.abs(np.fft.fft2(u))
            assert np.all(cur <= prev * (1 + 1e-12) + 1e-14)
            prev = cur

    def test_heat_equation_agreement(self):
        n, L, dt, t_end = 128, 2 * np.pi, 1e-3, 0.1
        g = Grid2D(n, n, L, L)
        X, Y = g.mesh()
        u0 = np.exp(np.cos(X) + 0.5 * np.sin(2 * Y))
        cfg = SolverConfig(dt=dt, t_end=t_end, coeffs=make_coeffs(), alpha=2.0, mobility_mode="constant",
                           store_every=10**6)
        spectral = solve(u0, cfg, g).final

        h = L / n
        e = np.ones(n)
        d1 = sparse.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")
        d1[0, -1] = d1[-1, 0] = 1.0
        d1 = d1.tocsr() / h**2
        eye = sparse.identity(n, format="csr")
        A = (sparse.identity(n * n) - dt * (sparse.kron(d1, eye) + sparse.kron(eye, d1))).tocsc()
        lu = splu(A)
        u = u0.ravel()
        for _ in range(round(t_end / dt)):
            u = lu.solve(u)
        fd = u.reshape(n, n)
        assert np.linalg.norm(spectral - fd) / np.linalg.norm(fd) <= 0.01


class TestInitialData:
    def test_centre_value_and_support(self):
        g = Grid2D(100, 80, 200.0, 160.0)
        u0 = initial_condition(g, 7.5, 20)
        X, Y = g.mesh()
        r = np.hypot(X - 100, Y - 80)
        assert u0.max() == pytest.approx(1.2 * math.exp(-2 / 150) - 0.2, rel=1e-12)
        assert support_radius(7.5, 20) == pytest.approx(math.sqrt(150 * math.log(6)))
        assert support_radius(7.5, 20) == pytest.approx(16.39, abs=0.01)
        assert np.all(u0[r > support_radius(7.5, 20)] == 0.0)
        assert np.all(u0 >= 0)

    def test_exact_centre(self):
        g = Grid2D(16, 16, 2.0, 2.0)
        assert initial_condition(g, 7.5, 20, centers=[(g.x[3], g.y[5])])[3, 5] == pytest.approx(1.0)

    def test_mass(self):
        g = Grid2D(400, 320, 200.0, 160.0)
        assert g.integrate(initial_condition(g, 7.5, 20)) == pytest.approx(initial_mass(7.5, 20), rel=1e-3)
        assert g.integrate(initial_condition(g, 7.5, 20, normalize_mass=True)) == pytest.approx(1.0)


class TestCoverage:
    g = Grid2D(20, 16, 200.0, 160.0)

    def test_saturated(self):
        assert covered_mass(np.full(self.g.shape, 1.0), self.g) == pytest.approx(1.0)

    def test_empty(self):
        assert covered_mass(np.zeros(self.g.shape), self.g) == 0.0

    def test_half_domain(self):
        u = np.zeros(self.g.shape)
        u[:10] = 2.0 / self.g.area
        assert covered_mass(u, self.g) == pytest.approx(0.5)

    def test_running_average(self):
        t = np.array([0.0, 1.0, 2.0, 4.0])
        np.testing.assert_allclose(running_time_average(t, [0, 2, 2, 4]), [0, 1, 1.5, 2.25])

    def test_curve_queries(self):
        c = coverage_from_series([0, 1, 2, 3], [0.0, 0.4, 0.8, 1.0])
        assert c.at(1.5, "instantaneous") == pytest.approx(0.6)
        assert c.first_time_reaching(0.5, "instantaneous") == pytest.approx(1.25)
        assert c.first_time_reaching(2.0) is None

    def test_accumulator_matches_trajectory(self):
        params = ModelParams(alpha=1.5)
        g = Grid2D(50, 40, 200.0, 160.0, "neumann_mirror")
        cfg = SolverConfig(dt=1.0, t_end=10.0, coeffs=closure_coeffs(params), alpha=1.5)
        acc = CoverageAccumulator(g)
        traj = solve(initial_condition(g, 7.5, 20), cfg, g, [acc])
        a, b = acc.curve(), coverage(traj)
        np.testing.assert_allclose(a.instantaneous, b.instantaneous)
        assert np.all(np.diff(a.instantaneous) >= -1e-12)
        assert np.all(np.diff(a.time_averaged) >= -1e-12)
