import math

import numpy as np
import pytest
from scipy import integrate

from levyswarm.alignment import (
    FixedPointError,
    FixedPointInfo,
    InfluenceKernelSpec,
    diffusive_flux,
    lambda_w,
    nonlocal_flux,
    resolve_w,
    solve_aligned,
    weak_alignment_w,
)
from levyswarm.coefficients import ModelParams, ParameterError, closure_coeffs
from levyswarm.fracpde import SolverConfig, initial_condition, solve
from levyswarm.grid import Grid2D

PARAMS = ModelParams(alpha=1.5, zeta=0.5, kappa_align=2.0)
COEFFS = closure_coeffs(PARAMS)


def sin_field(grid, k=1):
    X, _ = grid.mesh()
    return np.stack((np.sin(k * X), np.zeros(grid.shape)))


def polar_coefficient(kernel, k=1.0):
    """int over the disc of K(r) cos(k r cos phi), by nested quadrature in (r, phi)."""
    inner = lambda r: integrate.quad(lambda p: math.cos(k * r * math.cos(p)), 0, 2 * math.pi, epsabs=1e-13)[0]
    val, _ = integrate.quad(lambda r: float(kernel(r)) * inner(r) * r, 0, kernel.cutoff, epsabs=1e-13, limit=200)
    return val


class TestKernel:
    def test_default_cutoff_and_mass(self):
        k = InfluenceKernelSpec(2.0)
        assert k.cutoff == 10.0
        val, _ = integrate.quad(lambda r: 2 * math.pi * r * float(k(r)), 0, k.cutoff)
        assert k.mass == pytest.approx(val, rel=1e-12)
        assert k.mass == pytest.approx(1 - 6 * math.exp(-5))

    def test_short_cutoff_rejected(self):
        with pytest.raises(ParameterError):
            InfluenceKernelSpec(1.0, cutoff=3.0)
        with pytest.raises(ParameterError):
            InfluenceKernelSpec(0.0)

    def test_transform_at_zero_is_mass(self):
        k = InfluenceKernelSpec(1.5, cutoff=12.0)
        assert k.transform(0.0)[0] == pytest.approx(k.mass, rel=1e-13)


class TestFlux:
    def test_constant_w(self, periodic_2pi):
        k = InfluenceKernelSpec(0.4)
        w = np.stack((np.full(periodic_2pi.shape, 2.0), np.full(periodic_2pi.shape, -0.5)))
        J = nonlocal_flux(w, k, periodic_2pi)
        np.testing.assert_allclose(J, k.mass * w, atol=1e-13)

    def test_single_mode_against_polar_quadrature(self, periodic_2pi):
        k = InfluenceKernelSpec(0.5)
        J = nonlocal_flux(sin_field(periodic_2pi), k, periodic_2pi)
        coef = polar_coefficient(k)
        np.testing.assert_allclose(J, coef * sin_field(periodic_2pi), atol=1e-10)

    def test_delta_limit(self, periodic_2pi):
        k = InfluenceKernelSpec(0.02)  # far below the cell size 0.196
        w = sin_field(periodic_2pi) + 0.3 * np.roll(sin_field(periodic_2pi, 2), 1, axis=0)
        J = nonlocal_flux(w, k, periodic_2pi)
        assert np.linalg.norm(J - k.mass * w) <= 0.01 * np.linalg.norm(w)

    def test_local_limit_second_order(self, periodic_2pi):
        w = sin_field(periodic_2pi)
        errs = []
        for R in (0.4, 0.2, 0.1):
            k = InfluenceKernelSpec(R)
            errs.append(np.linalg.norm(nonlocal_flux(w, k, periodic_2pi) - k.mass * w))
        for e1, e2 in zip(errs, errs[1:]):
            assert e1 / e2 == pytest.approx(4.0, abs=1.0)

    def test_linear(self, periodic_2pi, rng):
        k = InfluenceKernelSpec(0.3)
        a, b = rng.random((2, 2) + periodic_2pi.shape)
        lhs = nonlocal_flux(2.5 * a - 1.5 * b, k, periodic_2pi)
        rhs = 2.5 * nonlocal_flux(a, k, periodic_2pi) - 1.5 * nonlocal_flux(b, k, periodic_2pi)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_mirror_parity(self):
        g = Grid2D(32, 32, 10.0, 10.0, "neumann_mirror")
        X, Y = g.mesh()
        w = np.stack((np.sin(math.pi * X / 10) * np.cos(math.pi * Y / 10), np.zeros(g.shape)))
        J = nonlocal_flux(w, InfluenceKernelSpec(0.5), g)
        assert np.linalg.norm(J[1]) < 1e-12
        assert np.all(np.isfinite(J))

    def test_bad_shape(self, periodic_2pi):
        with pytest.raises(ValueError):
            nonlocal_flux(np.zeros(periodic_2pi.shape), InfluenceKernelSpec(1.0), periodic_2pi)


class TestDirection:
    def test_constant(self, periodic_2pi):
        w = np.stack((np.full(periodic_2pi.shape, 2.0), np.zeros(periodic_2pi.shape)))
        lam, deg = lambda_w(w, InfluenceKernelSpec(0.5), periodic_2pi)
        np.testing.assert_allclose(lam[0], 1.0)
        np.testing.assert_allclose(lam[1], 0.0, atol=1e-15)
        assert not deg.any()

    def test_zero(self, periodic_2pi):
        lam, deg = lambda_w(np.zeros((2,) + periodic_2pi.shape), InfluenceKernelSpec(0.5), periodic_2pi)
        assert deg.all()
        assert np.all(lam == 0.0)

    def test_unit_length(self, periodic_2pi, rng):
        lam, deg = lambda_w(rng.standard_normal((2,) + periodic_2pi.shape), InfluenceKernelSpec(0.3), periodic_2pi)
        np.testing.assert_allclose(np.hypot(*lam)[~deg], 1.0, atol=1e-12)


class TestWeakAlignment:
    grid = Grid2D(50, 40, 200.0, 160.0, "neumann_mirror")
    kernel = InfluenceKernelSpec(10.0)

    def u0(self):
        return initial_condition(self.grid, 7.5, 20)

    def test_zero_ell_is_pure_levy(self):
        u = self.u0()
        np.testing.assert_array_equal(weak_alignment_w(u, COEFFS, 0.0, self.kernel, self.grid, 1.5),
                                      diffusive_flux(u, COEFFS, 1.5, self.grid))

    def test_constant_density(self):
        w = weak_alignment_w(np.full(self.grid.shape, 0.3), COEFFS, 0.5, self.kernel, self.grid, 1.5)
        assert np.abs(w).max() < 1e-12

    def test_affine_in_ell(self):
        u = self.u0()
        w0, w1, w2 = (weak_alignment_w(u, COEFFS, e, self.kernel, self.grid, 1.5) for e in (0.0, 1.0, 0.3))
        np.testing.assert_allclose(w2 - w0, 0.3 * (w1 - w0), atol=1e-14)

    def test_fixed_point_residual_monotone(self):
        info = FixedPointInfo()
        resolve_w(self.u0(), COEFFS, 0.01, self.kernel, self.grid, 1.5, info=info)
        h = np.array(info.history)
        assert h[-1] < 1e-8
        assert np.all(np.diff(h) <= 0)

    def test_fixed_point_failure_reports_history(self):
        with pytest.raises(FixedPointError) as exc:
            resolve_w(self.u0(), COEFFS, 5.0, self.kernel, self.grid, 1.5, max_iter=20)
        assert len(exc.value.history) == 20


class TestAlignedSolve:
    grid = Grid2D(50, 40, 200.0, 160.0, "neumann_mirror")
    kernel = InfluenceKernelSpec(10.0)

    def cfg(self, t_end=5.0):
        return SolverConfig(dt=1.0, t_end=t_end, coeffs=COEFFS, alpha=1.5, linear_solver_tol=1e-12)

    def test_zero_ell_identical(self):
        u0 = initial_condition(self.grid, 7.5, 20)
        a = solve(u0, self.cfg(), self.grid)
        b = solve_aligned(u0, self.cfg(), self.grid, 0.0, self.kernel)
        for x, y in zip(a.fields, b.fields):
            np.testing.assert_array_equal(x, y)

    @pytest.mark.parametrize("ell", [0.0, 0.01])
    def test_radial_symmetry(self, ell):
        g = Grid2D(48, 48, 160.0, 160.0, "periodic")
        u0 = initial_condition(g, 7.5, 20)
        u0 = 0.25 * (u0 + np.rot90(u0) + np.rot90(u0, 2) + np.rot90(u0, 3))
        u0 = 0.5 * (u0 + u0.T)
        cfg = SolverConfig(dt=1.0, t_end=3.0, coeffs=COEFFS, alpha=1.5, linear_solver_tol=1e-13)
        u = solve_aligned(u0, cfg, g, ell, self.kernel).final
        scale = np.abs(u).max()
        assert np.abs(u - np.rot90(u)).max() <= 1e-10 * scale
        assert np.abs(u - u.T).max() <= 1e-10 * scale

    def test_mass_and_stats(self):
        u0 = initial_condition(self.grid, 7.5, 20)
        traj = solve_aligned(u0, self.cfg(10.0), self.grid, 0.01, self.kernel)
        assert traj.stats["relative_mass_change"] <= 1e-12
        assert traj.stats["ell"] == 0.01
        assert 0 < traj.stats["fp_iterations_max"] <= 100

    def test_continuity_in_ell(self):
        u0 = initial_condition(self.grid, 7.5, 20)
        base = solve_aligned(u0, self.cfg(), self.grid, 0.01, self.kernel).final
        dists = [np.abs(solve_aligned(u0, self.cfg(), self.grid, 0.01 + d, self.kernel).final - base).max()
                 for d in (4e-3, 2e-3, 1e-3)]
        assert dists[0] > dists[1] > dists[2]
        # Lipschitz in ell: halving the gap halves the distance
        assert dists[0] / dists[1] == pytest.approx(2.0, rel=0.05)
        assert dists[1] / dists[2] == pytest.approx(2.0, rel=0.05)

    def test_negative_ell(self):
        with pytest.raises(ParameterError):
            solve_aligned(initial_condition(self.grid, 7.5, 20), self.cfg(), self.grid, -0.1, self.kernel)
