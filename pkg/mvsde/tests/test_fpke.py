import numpy as np
from django.test import SimpleTestCase

from mvsde.coefficients import (
    burgers_gauss_model,
    constant_model,
    default_hypothesis_grid,
    estimate_lambda,
    porous_regularized_model,
)
from mvsde.exceptions import ConfigurationError, PreconditionError, StabilityError
from mvsde.fpke import (
    SchemeMode,
    SchemeOptions,
    bump_test_function,
    conservation_report,
    density_bound,
    face_fluxes,
    initial_regularity,
    l1_contraction_check,
    linf_bound_check,
    moment_increments,
    refine_study,
    solve_fpke,
    stable_time_step,
    weak_residual,
)
from mvsde.grids import Grid1D
from mvsde.stats import heat_kernel_solution, l1_distance, reference_profile


def stable_dt(model, u0, T, mode=SchemeMode.EXPLICIT):
    r_max = density_bound(model, u0.grid, T, u0)
    return stable_time_step(model, u0.grid, T, r_max, mode)


class HeatOracleTestCase(SimpleTestCase):
    """
    Constant coefficients a = 1, b = 0 against the closed-form gaussian
    """

    def setUp(self):
        self.model = constant_model(1.0)

    def heat_error(self, n_cells):
        grid = Grid1D(-8.0, 8.0, n_cells)
        u0 = reference_profile('gaussian', grid, mean=0.0, sd=0.5)
        sol = solve_fpke(self.model, u0, 0.5, stable_dt(self.model, u0, 0.5), SchemeOptions(final_only=True))
        exact = heat_kernel_solution(grid, 0.0, 0.5, 0.5)
        return l1_distance(sol.final, exact)

    def test_heat_kernel_error_and_refinement_factor(self):
        """Test that the L1 error is small and drops by at least 1.8 when dx is halved"""
        coarse = self.heat_error(256)
        fine = self.heat_error(512)
        self.assertLessEqual(fine, 2e-3)
        self.assertGreaterEqual(coarse / fine, 1.8)

    def test_zero_horizon_returns_the_initial_snapshot(self):
        """Test that T = 0 gives a single snapshot equal to u0"""
        grid = Grid1D(-8.0, 8.0, 64)
        u0 = reference_profile('gaussian', grid)
        sol = solve_fpke(self.model, u0, 0.0, 0.01)
        self.assertEqual(sol.n_snapshots, 1)
        np.testing.assert_array_equal(sol.final.values, u0.values)

    def test_dt_above_cfl_names_the_stability_rule(self):
        """Test that a too large explicit dt raises StabilityError naming the rule"""
        grid = Grid1D(-8.0, 8.0, 128)
        u0 = reference_profile('gaussian', grid)
        with self.assertRaises(StabilityError) as ctx:
            solve_fpke(self.model, u0, 0.5, 0.1)
        self.assertIn('stability rule', str(ctx.exception))
        self.assertEqual(ctx.exception.exit_code, 1)

    def test_initial_density_must_be_a_probability(self):
        """Test that u0 with mass different from 1 is rejected"""
        grid = Grid1D(-8.0, 8.0, 64)
        u0 = reference_profile('gaussian', grid)
        half = type(u0)(grid, 0.5 * u0.values)
        with self.assertRaises(PreconditionError):
            solve_fpke(self.model, half, 0.1, 0.001)


class ConservationTestCase(SimpleTestCase):
    """
    Mass, positivity and L1 norm on the nonlinear benchmarks
    """

    def setUp(self):
        self.grid = Grid1D(-6.0, 6.0, 128)
        self.u0 = reference_profile('gaussian', self.grid, sd=0.7)

    def assert_probability_solution(self, sol, mass_tol=1e-10):
        summary = conservation_report(sol)
        self.assertLessEqual(summary['mass_drift'], mass_tol)
        self.assertGreaterEqual(summary['min_value'], -1e-14)
        self.assertLessEqual(summary['l1_growth'], mass_tol)

    def test_porous_family_with_burgers_drift_explicit(self):
        """Test that the explicit scheme conserves mass and positivity on the porous benchmark"""
        model = porous_regularized_model(0.5, alpha=1.0, kappa=0.5, drift='burgers-gauss', c=1.0)
        dt = 0.9 * stable_dt(model, self.u0, 0.25)
        sol = solve_fpke(model, self.u0, 0.25, dt, SchemeOptions(store_every=4))
        self.assert_probability_solution(sol)
        self.assertAlmostEqual(sol.horizon, 0.25, places=12)

    def test_semi_implicit_allows_larger_steps(self):
        """Test that semi-implicit mode runs above the explicit limit and still conserves mass"""
        model = porous_regularized_model(0.5, alpha=1.0)
        explicit = stable_dt(model, self.u0, 0.25)
        dt = 4.0 * explicit
        with self.assertRaises(StabilityError):
            solve_fpke(model, self.u0, 0.25, dt)
        sol = solve_fpke(model, self.u0, 0.25, dt, SchemeOptions(mode=SchemeMode.SEMI_IMPLICIT))
        self.assert_probability_solution(sol, mass_tol=1e-9)

    def test_boundary_faces_carry_no_flux(self):
        """Test that both boundary fluxes are exactly zero"""
        model = burgers_gauss_model(0.5, c=1.0)
        flux = face_fluxes(model, self.grid, 0.0, self.u0.values)
        self.assertEqual(flux[0], 0.0)
        self.assertEqual(flux[-1], 0.0)

    def test_store_every_and_index_lookup(self):
        """Test snapshot spacing and left-endpoint lookup"""
        model = constant_model(0.5)
        sol = solve_fpke(model, self.u0, 0.1, 0.001, SchemeOptions(store_every=10))
        self.assertEqual(sol.n_snapshots, 11)
        self.assertAlmostEqual(sol.dt, 0.01, places=12)
        self.assertEqual(sol.index_at(0.0149), 1)
        self.assertEqual(sol.index_at(0.02), 2)

    def test_exact_lookup_refuses_times_between_snapshots(self):
        """Test that exact() returns stored snapshots only, while at() falls back to the left one"""
        model = constant_model(0.5)
        sol = solve_fpke(model, self.u0, 0.1, 0.001, SchemeOptions(store_every=10))
        self.assertTrue(sol.has_snapshot(0.03))
        self.assertFalse(sol.has_snapshot(0.035))
        self.assertAlmostEqual(sol.exact(0.03).time_stamp, 0.03, places=12)
        self.assertAlmostEqual(sol.at(0.035).time_stamp, 0.03, places=12)
        with self.assertRaises(PreconditionError):
            sol.exact(0.035)


class QuantitativePropertyTestCase(SimpleTestCase):
    """
    L1 contraction, L-infinity bound and the weak formulation
    """

    def setUp(self):
        self.grid = Grid1D(-6.0, 6.0, 128)

    def test_l1_contraction_on_two_bumps(self):
        """Test that the L1 distance of two porous solutions does not grow"""
        model = porous_regularized_model(0.5, alpha=1.0)
        u0 = reference_profile('bump', self.grid, center=-0.5, width=1.5)
        u0_bar = reference_profile('bump', self.grid, center=0.75, width=1.0)
        dt = 0.9 * min(stable_dt(model, u0, 0.25), stable_dt(model, u0_bar, 0.25))
        report = l1_contraction_check(model, u0, u0_bar, 0.25, dt)
        self.assertTrue(report.passed, report.context)

    def test_linf_bound_on_burgers_benchmark(self):
        """Test that ||u(t)||_inf stays below Lambda T + ||u0||_inf"""
        model = burgers_gauss_model(0.5, c=1.0)
        u0 = reference_profile('gaussian', self.grid, sd=0.5)
        T = 0.25
        sol = solve_fpke(model, u0, T, 0.9 * stable_dt(model, u0, T))
        r_max = 2.0 * density_bound(model, self.grid, T, u0)
        lam = estimate_lambda(model, default_hypothesis_grid(T, self.grid, r_max)).estimated_constant
        report = linf_bound_check(sol, lam)
        self.assertTrue(report.passed, report.context)

    def test_weak_residual_is_small_and_zero_at_start(self):
        """Test the weak formulation residual for a bump test function"""
        model = porous_regularized_model(0.5, alpha=1.0, drift='burgers-gauss', c=1.0)
        u0 = reference_profile('gaussian', self.grid, sd=0.7)
        sol = solve_fpke(model, u0, 0.2, 0.9 * stable_dt(model, u0, 0.2))
        phi = bump_test_function(0.0, 2.0)
        self.assertEqual(weak_residual(sol, phi, 0.0), 0.0)
        self.assertLess(weak_residual(sol, phi, sol.horizon), 1e-2)
        self.assertTrue(np.isfinite(moment_increments(sol, phi)))

    def test_weak_residual_rejects_support_at_the_boundary(self):
        """Test that test functions must be supported inside the box"""
        model = constant_model(0.5)
        u0 = reference_profile('gaussian', self.grid)
        sol = solve_fpke(model, u0, 0.0, 0.0)
        with self.assertRaises(PreconditionError):
            weak_residual(sol, bump_test_function(5.5, 1.0), 0.0)

    def test_initial_regularity_flags_discontinuous_data(self):
        """Test that smooth data passes the D0 proxy and a uniform step does not"""
        model = porous_regularized_model(0.5)
        smooth = initial_regularity(model, reference_profile('gaussian', self.grid))
        rough = initial_regularity(model, reference_profile('uniform', self.grid, a=-1.0, b=1.0))
        self.assertTrue(smooth.passed)
        self.assertFalse(rough.passed)
        self.assertIsNotNone(rough.witness)


class RefinementStudyTestCase(SimpleTestCase):
    """
    Self-convergence under simultaneous dx and dt refinement
    """

    def test_study_reports_one_row_per_level(self):
        """Test the table shape and a positive fitted order on the heat equation"""
        model = constant_model(0.5)
        grid = Grid1D(-6.0, 6.0, 32)
        table = refine_study(model, lambda g: reference_profile('gaussian', g), 0.1, 3, 0.02, grid=grid)
        self.assertEqual(len(table.rows), 3)
        self.assertEqual([row.n_cells for row in table.rows], [64, 128, 256])
        self.assertGreater(table.fitted_order, 0.5)

    def test_study_needs_two_levels(self):
        """Test that fewer than two levels is a configuration error"""
        grid = Grid1D(-6.0, 6.0, 32)
        with self.assertRaises(ConfigurationError):
            refine_study(constant_model(0.5), reference_profile('gaussian', grid), 0.1, 1, 0.01)
