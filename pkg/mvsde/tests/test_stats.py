import numpy as np
from django.test import SimpleTestCase
from scipy.stats import norm

from mvsde.exceptions import ConfigurationError, GridMismatchError, PreconditionError
from mvsde.grids import Grid1D, GridDensity
from mvsde.stats import (
    MatchReport,
    Metric,
    counts_to_density,
    fitted_log2_slope,
    histogram_density,
    l1_distance,
    linf_distance,
    reference_profile,
    resample_linear,
    w1_distance,
)


def spike(grid, cell):
    values = np.zeros(grid.n_cells)
    values[cell] = 1.0 / grid.dx
    return GridDensity(grid, values)


class DistanceTestCase(SimpleTestCase):
    """
    L1, Linf and W1 distances between densities
    on the benchmark grid [-8, 8] with 1024 cells
    """

    def setUp(self):
        self.grid = Grid1D(-8.0, 8.0, 1024)
        self.p = reference_profile('gaussian', self.grid, mean=0.0, sd=1.0)
        self.q = reference_profile('gaussian', self.grid, mean=0.5, sd=1.0)

    def test_identical_densities_are_at_distance_zero(self):
        """Test that every metric vanishes on identical inputs"""
        self.assertEqual(l1_distance(self.p, self.p), 0.0)
        self.assertEqual(linf_distance(self.p, self.p), 0.0)
        self.assertEqual(w1_distance(self.p, self.p), 0.0)

    def test_disjoint_indicators_have_l1_distance_two(self):
        """Test that unit-mass densities with disjoint supports are at L1 distance 2"""
        left = reference_profile('uniform', self.grid, a=-3.0, b=-1.0)
        right = reference_profile('uniform', self.grid, a=1.0, b=3.0)
        self.assertAlmostEqual(l1_distance(left, right), 2.0, places=12)

    def test_gaussian_shift_l1_matches_closed_form(self):
        """Test that the L1 distance of N(0,1) and N(0.5,1) is twice their total variation"""
        expected = 2.0 * (2.0 * norm.cdf(0.25) - 1.0)
        self.assertAlmostEqual(l1_distance(self.p, self.q), expected, delta=1e-3)

    def test_gaussian_shift_w1_equals_shift(self):
        """Test that W1 of two mean-shifted gaussians equals the shift"""
        self.assertAlmostEqual(w1_distance(self.p, self.q), 0.5, delta=1e-3)

    def test_w1_of_unit_spikes_is_their_separation(self):
        """Test that spikes one unit apart are at W1 distance 1"""
        grid = Grid1D(-8.0, 8.0, 16)
        self.assertAlmostEqual(w1_distance(spike(grid, 8), spike(grid, 9)), 1.0, places=12)

    def test_w1_shift_of_one_spike_changes_distance_by_cells(self):
        """Test that moving one spike by k cells changes W1 by k dx"""
        grid = Grid1D(-4.0, 4.0, 64)
        base = w1_distance(spike(grid, 10), spike(grid, 20))
        moved = w1_distance(spike(grid, 10), spike(grid, 25))
        self.assertAlmostEqual(moved - base, 5 * grid.dx, places=12)
        both = w1_distance(spike(grid, 15), spike(grid, 25))
        self.assertAlmostEqual(both, base, places=12)

    def test_metrics_are_symmetric_and_satisfy_triangle_inequality(self):
        """Test symmetry and the triangle inequality on a sampled triple"""
        r = reference_profile('bump', self.grid, center=1.0, width=2.0)
        for metric in (l1_distance, linf_distance, w1_distance):
            self.assertAlmostEqual(metric(self.p, self.q), metric(self.q, self.p), places=14)
            self.assertLessEqual(metric(self.p, r), metric(self.p, self.q) + metric(self.q, r) + 1e-14)

    def test_grid_mismatch_is_rejected(self):
        """Test that densities on different grids cannot be compared"""
        other = reference_profile('gaussian', Grid1D(-8.0, 8.0, 512))
        with self.assertRaises(GridMismatchError):
            l1_distance(self.p, other)

    def test_w1_requires_equal_masses(self):
        """Test that W1 rejects inputs whose masses differ"""
        half = GridDensity(self.grid, 0.5 * self.q.values)
        with self.assertRaises(PreconditionError):
            w1_distance(self.p, half)


class ReferenceProfileTestCase(SimpleTestCase):
    """
    Reference profiles used as initial data and oracles
    """

    def setUp(self):
        self.grid = Grid1D(-8.0, 8.0, 1024)

    def test_gaussian_is_normalized(self):
        """Test that the gaussian profile has mass 1"""
        density = reference_profile('gaussian', self.grid, mean=0.0, sd=1.0)
        self.assertAlmostEqual(density.mass, 1.0, delta=1e-10)

    def test_uniform_has_value_one_half_on_support(self):
        """Test that uniform(-1, 1) is 0.5 inside its support and 0 outside"""
        density = reference_profile('uniform', self.grid, a=-1.0, b=1.0)
        centers = self.grid.centers
        inside = np.abs(centers) < 1.0
        np.testing.assert_allclose(density.values[inside], 0.5, rtol=1e-12)
        self.assertTrue(np.all(density.values[np.abs(centers) > 1.0] == 0.0))

    def test_bump_peaks_at_center_and_vanishes_outside(self):
        """Test that the bump has its maximum at the center and compact support"""
        density = reference_profile('bump', self.grid, center=1.0, width=2.0)
        centers = self.grid.centers
        peak = centers[np.argmax(density.values)]
        self.assertLess(abs(peak - 1.0), self.grid.dx)
        self.assertTrue(np.all(density.values[np.abs(centers - 1.0) >= 2.0] == 0.0))

    def test_unsupported_kind_is_a_configuration_error(self):
        """Test that an unknown profile kind names the initial.kind key"""
        with self.assertRaises(ConfigurationError) as ctx:
            reference_profile('lorentzian', self.grid)
        self.assertEqual(ctx.exception.key, 'initial.kind')
        self.assertEqual(ctx.exception.exit_code, 2)


class EmpiricalDensityTestCase(SimpleTestCase):
    """
    Histograms, resampling and helpers shared by the stochastic stages
    """

    def setUp(self):
        self.grid = Grid1D(-4.0, 4.0, 32)

    def test_histogram_of_one_point_is_a_spike(self):
        """Test that a single sample produces a spike of height 1/dx"""
        density = histogram_density([0.1], self.grid)
        self.assertAlmostEqual(density.values.max(), 1.0 / self.grid.dx)
        self.assertAlmostEqual(density.mass, 1.0, places=12)

    def test_histogram_clips_samples_outside_the_box(self):
        """Test that samples outside the box land in the boundary cells and keep mass 1"""
        with self.assertLogs('mvsde.stats', level='WARNING'):
            density = histogram_density([-10.0, 0.0, 10.0], self.grid)
        self.assertAlmostEqual(density.mass, 1.0, places=12)
        self.assertGreater(density.values[0], 0.0)
        self.assertGreater(density.values[-1], 0.0)

    def test_empty_samples_are_rejected(self):
        """Test that zero samples are a precondition error"""
        with self.assertRaises(PreconditionError):
            histogram_density([], self.grid)
        with self.assertRaises(PreconditionError):
            counts_to_density(np.zeros(self.grid.n_cells, dtype=int), self.grid)

    def test_resample_linear_keeps_mass(self):
        """Test that resampling onto a finer grid keeps the mass"""
        density = reference_profile('gaussian', self.grid, sd=0.8)
        fine = resample_linear(density, self.grid.refine())
        self.assertAlmostEqual(fine.mass, density.mass, places=12)
        self.assertLess(l1_distance(fine, reference_profile('gaussian', self.grid.refine(), sd=0.8)), 0.02)

    def test_fitted_log2_slope(self):
        """Test the log2 slope of a halving sequence and the nan for non-positive values"""
        self.assertAlmostEqual(fitted_log2_slope([1.0, 0.5, 0.25, 0.125]), -1.0, places=12)
        self.assertTrue(np.isnan(fitted_log2_slope([1.0, 0.0, 0.5])))

    def test_match_report_passes_iff_value_within_threshold(self):
        """Test the pass rule of MatchReport"""
        self.assertTrue(MatchReport.evaluate(Metric.W1, 0.02, 0.02).passed)
        report = MatchReport.evaluate('L1', 0.03, 0.02, 'label')
        self.assertFalse(report.passed)
        self.assertEqual(report.verdict, 'FAIL')
        self.assertEqual(report.metric, Metric.L1)
