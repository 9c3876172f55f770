import numpy as np
from django.test import SimpleTestCase, override_settings

from mvsde.coefficients import (
    CoefficientFamily,
    CoefficientModel,
    ConditionId,
    HypothesisGrid,
    audit_all,
    build_model,
    burgers_gauss_model,
    check_bounds,
    check_growth_bstar,
    check_h_envelope,
    check_lipschitz_bstar,
    check_monotonicity,
    check_nondegeneracy,
    check_time_regularity,
    constant_model,
    estimate_lambda,
    eval_beta,
    eval_bstar,
    linear_drift_model,
    porous_regularized_model,
    reciprocal_diffusion_model,
    symmetric_r_samples,
)
from mvsde.exceptions import ConfigurationError, ModelEvaluationError


def lattice(r_max=4.0, n_r=81, x_max=3.0, n_x=25, T=1.0, n_t=5, pair_stride=1):
    return HypothesisGrid(
        t_samples=np.linspace(0.0, T, n_t),
        x_samples=np.linspace(-x_max, x_max, n_x),
        r_samples=symmetric_r_samples(r_max, n_r),
        pair_stride=pair_stride,
    )


class TransformedCoefficientTestCase(SimpleTestCase):
    """
    beta = a r and b* = b r on hand-checkable points
    """

    def test_beta_identity_case(self):
        """Test that a = 1 gives beta(r) = r"""
        model = constant_model(1.0)
        self.assertEqual(float(eval_beta(model, 0.0, 0.0, 2.0)), 2.0)

    def test_beta_vanishes_at_zero_density(self):
        """Test that beta(0) = 0 for the porous family"""
        model = porous_regularized_model(1.0, alpha=1.0, spatial_decay=False)
        self.assertEqual(float(eval_beta(model, 0.0, 0.0, 0.0)), 0.0)

    def test_beta_porous_hand_value(self):
        """Test that a(r) = 1 + r^2/(1 + r^2) gives beta(1) = 1.5"""
        model = porous_regularized_model(1.0, alpha=1.0, spatial_decay=False)
        self.assertAlmostEqual(float(eval_beta(model, 0.0, 0.0, 1.0)), 1.5, places=15)

    def test_bstar_examples(self):
        """Test b* for zero, constant and burgers-gauss drifts"""
        self.assertEqual(float(eval_bstar(constant_model(1.0), 0.0, 0.0, 3.0)), 0.0)
        self.assertEqual(float(eval_bstar(constant_model(1.0, c=0.5), 0.0, 0.0, 2.0)), 1.0)
        model = burgers_gauss_model(1.0, c=1.0)
        self.assertAlmostEqual(float(eval_bstar(model, 0.0, 0.0, 1.0)), 0.5, places=15)

    def test_broadcasting_over_arrays(self):
        """Test that evaluators broadcast (t, x, r) like numpy"""
        model = porous_regularized_model(0.5, kappa=0.5)
        values = model.eval_a(np.zeros((3, 1)), np.linspace(-1, 1, 4), 1.0)
        self.assertEqual(values.shape, (3, 4))

    def test_non_finite_coefficient_is_a_model_error(self):
        """Test that a coefficient returning nan raises ModelEvaluationError"""
        model = CoefficientModel(
            family=CoefficientFamily.USER,
            b=lambda t, x, r: np.full(np.shape(r), np.nan),
            a=lambda t, x, r: 1.0 + 0.0 * r,
            gamma0=1.0,
            h_envelope=lambda x: np.zeros(np.shape(x)),
        )
        with self.assertRaises(ModelEvaluationError):
            model.eval_b(0.0, 0.0, np.array([1.0]))

    def test_finite_difference_fallback_matches_analytic_derivative(self):
        """Test that a model without derivatives uses central differences"""
        model = CoefficientModel(
            family=CoefficientFamily.USER,
            b=lambda t, x, r: np.exp(-x * x) / (1.0 + r * r),
            a=lambda t, x, r: 0.5 + r * r / (1.0 + r * r) + 0.0 * x,
            gamma0=0.5,
            h_envelope=lambda x: 2.0 * np.exp(-x * x),
        )
        r = np.linspace(-3.0, 3.0, 13)
        np.testing.assert_allclose(model.eval_da_dr(0.0, 0.2, r), 2.0 * r / (1.0 + r * r) ** 2, atol=1e-7)
        np.testing.assert_allclose(
            model.eval_db_dx(0.0, 0.2, r), -0.4 * np.exp(-0.04) / (1.0 + r * r), atol=1e-7)

    def test_finite_difference_error_is_second_order(self):
        """Test that halving the difference step divides the derivative error by at least 3.5"""
        model = CoefficientModel(
            family=CoefficientFamily.USER,
            b=lambda t, x, r: 0.0 * r,
            a=lambda t, x, r: 0.5 + r * r / (1.0 + r * r) + 0.0 * x,
            gamma0=0.5,
            h_envelope=lambda x: np.zeros(np.shape(x)),
        )
        r = np.linspace(-3.0, 3.0, 13)
        exact = 2.0 * r / (1.0 + r * r) ** 2
        errors = [
            np.max(np.abs(model.eval_da_dr(0.0, 0.2, r, step=step) - exact))
            for step in (1e-2, 5e-3, 2.5e-3)
        ]
        self.assertGreater(errors[-1], 0.0)
        for coarse, fine in zip(errors, errors[1:]):
            self.assertGreaterEqual(coarse / fine, 3.5)

    def test_gamma0_must_be_positive(self):
        """Test that a non-positive gamma0 is rejected"""
        with self.assertRaises(ConfigurationError) as ctx:
            constant_model(0.0)
        self.assertEqual(ctx.exception.key, 'coefficients.gamma0')


class HypothesisAuditTestCase(SimpleTestCase):
    """
    Hypothesis audit on the built-in families and the counterexamples
    """

    def setUp(self):
        self.grid = lattice()

    def test_lattice_requires_zero_and_both_signs(self):
        """Test that r samples without 0 are rejected"""
        with self.assertRaises(ConfigurationError):
            HypothesisGrid([0.0], [0.0], [0.5, 1.0, 2.0])
        with self.assertRaises(ConfigurationError):
            HypothesisGrid([0.0], [1.0, 0.0], [-1.0, 0.0, 1.0])

    def test_linear_beta_is_monotone_with_constant_one(self):
        """Test that a = 1 passes monotonicity with estimated constant 1"""
        report = check_monotonicity(constant_model(1.0), self.grid)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.estimated_constant, 1.0, places=10)

    def test_reciprocal_diffusion_fails_monotonicity_beyond_one(self):
        """Test that a(r) = 1/(1 + r^2) fails with a witness pair reaching |r| > 1"""
        model = reciprocal_diffusion_model(0.05, {'alpha': 1.0})
        report = check_monotonicity(model, self.grid)
        self.assertFalse(report.passed)
        self.assertIsNotNone(report.witness)
        t, x, r, r_bar = report.witness
        self.assertGreater(max(abs(r), abs(r_bar)), 1.0)
        self.assertEqual(report.condition_id, ConditionId.H1_MONOTONE)

    def test_porous_family_is_monotone(self):
        """Test that the porous family passes with constant at least gamma0"""
        model = porous_regularized_model(0.5, alpha=1.0, kappa=0.5)
        report = check_monotonicity(model, self.grid)
        self.assertTrue(report.passed)
        self.assertGreaterEqual(report.estimated_constant, 0.5 - 1e-9)

    def test_empty_pair_set_is_a_configuration_error(self):
        """Test that a pair stride leaving no pairs is rejected"""
        grid = lattice(n_r=3, pair_stride=5)
        with self.assertRaises(ConfigurationError):
            check_monotonicity(constant_model(1.0), grid)

    def test_lipschitz_examples(self):
        """Test the Lipschitz audit for zero drift, burgers-gauss and linear growth"""
        zero = check_lipschitz_bstar(constant_model(1.0), self.grid)
        self.assertTrue(zero.passed)
        self.assertEqual(zero.estimated_constant, 0.0)

        burgers = check_lipschitz_bstar(burgers_gauss_model(1.0, c=1.0), self.grid)
        self.assertTrue(burgers.passed)
        self.assertLessEqual(burgers.estimated_constant, 1.0 + 1e-9)

        linear = check_lipschitz_bstar(linear_drift_model(1.0, {'c': 1.0}), self.grid)
        self.assertFalse(linear.passed)
        self.assertIsNotNone(linear.witness)

    def test_nondegeneracy(self):
        """Test nondegeneracy on the porous family and its failure for reciprocal diffusion"""
        self.assertTrue(check_nondegeneracy(porous_regularized_model(0.5), self.grid).passed)
        report = check_nondegeneracy(reciprocal_diffusion_model(0.5, {'alpha': 1.0}), self.grid)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report.estimated_constant, 1.0 / 17.0, places=12)

    def test_lambda_estimate(self):
        """Test that Lambda vanishes for constant coefficients and is finite for the porous family"""
        self.assertEqual(estimate_lambda(constant_model(1.0), self.grid).estimated_constant, 0.0)
        report = estimate_lambda(porous_regularized_model(0.5, c=1.0, drift='burgers-gauss'), self.grid)
        self.assertTrue(report.passed)
        self.assertGreater(report.estimated_constant, 0.0)

    def test_bounds_detect_unbounded_drift(self):
        """Test that b(r) = c r fails the boundedness audit while the porous family passes"""
        self.assertTrue(check_bounds(porous_regularized_model(0.5, c=1.0, drift='burgers-gauss'), self.grid).passed)
        self.assertFalse(check_bounds(linear_drift_model(1.0, {'c': 1.0}), self.grid).passed)

    def test_supplementary_checks_on_porous_family(self):
        """Test growth, time regularity and envelope checks on a time-dependent porous model"""
        model = porous_regularized_model(0.5, alpha=1.0, kappa=0.5, drift='burgers-gauss', c=1.0)
        self.assertTrue(check_growth_bstar(model, self.grid).passed)
        self.assertTrue(check_time_regularity(model, self.grid).passed)
        envelope = check_h_envelope(model, self.grid)
        self.assertTrue(envelope.passed)
        self.assertGreater(envelope.estimated_constant, 0.0)

    def test_audit_all_order_and_constant_family(self):
        """Test that audit_all reports every condition in order and the constant family passes"""
        reports = audit_all(constant_model(0.5), self.grid)
        self.assertEqual(
            [report.condition_id.value for report in reports],
            ['H1-monotone', 'H1-nondegenerate', 'H2-bound', 'H3-lipschitz', 'lambda-finite',
             'H2-growth', 'time-regularity', 'h-envelope'],
        )
        self.assertTrue(all(report.passed for report in reports))

    def test_audit_all_core_checks_only(self):
        """Test that supplementary=False stops after the five core conditions"""
        reports = audit_all(constant_model(0.5), self.grid, supplementary=False)
        self.assertEqual(
            [report.condition_id.value for report in reports],
            ['H1-monotone', 'H1-nondegenerate', 'H2-bound', 'H3-lipschitz', 'lambda-finite'],
        )

    @override_settings(MVSDE={'TOL_MONOTONE': 1.0})
    def test_tolerance_comes_from_settings(self):
        """Test that the MVSDE settings dict overrides the monotonicity tolerance"""
        model = reciprocal_diffusion_model(0.05, {'alpha': 1.0})
        grid = lattice(r_max=1.5, n_r=31)
        self.assertTrue(check_monotonicity(model, grid).passed)


class BuildModelTestCase(SimpleTestCase):
    """
    Building models from run-configuration values
    """

    def test_builtin_families(self):
        """Test that each built-in family builds with its enum tag"""
        for family in ('constant', 'porous-regularized', 'burgers-gauss'):
            model = build_model(family, 0.5)
            self.assertEqual(model.family.value, family)

    def test_user_factory_by_import_path(self):
        """Test that the user family resolves its factory by dotted path"""
        model = build_model('user', 0.1, params={'alpha': 2.0},
                            factory='mvsde.coefficients.reciprocal_diffusion_model')
        self.assertAlmostEqual(float(model.eval_a(0.0, 0.0, 1.0)), 1.0)
        self.assertIn('reciprocal', model.model_id)

    def test_bad_factory_path(self):
        """Test that an unimportable factory is reported under coefficients.factory"""
        with self.assertRaises(ConfigurationError) as ctx:
            build_model('user', 0.1, factory='mvsde.coefficients.no_such_model')
        self.assertEqual(ctx.exception.key, 'coefficients.factory')

    def test_kappa_out_of_range(self):
        """Test that |kappa| > 1 is rejected"""
        with self.assertRaises(ConfigurationError):
            porous_regularized_model(0.5, kappa=1.5)
