"""
Stages run by the ``mvsde`` management command.

A ``Run`` owns one validated RunConfig, builds the model, grid and initial
density once and caches the FPKE solution so ``verify`` solves only once.
Each stage writes its CSVs into the output directory and returns its reports;
``Run.failures`` counts what did not pass.
"""
import logging

import numpy as np

from . import exports
from .coefficients import (
    CoefficientFamily,
    audit_all,
    audit_r_range,
    estimate_lambda,
)
from .conf import numerics_settings
from .exceptions import ConfigurationError
from .fpke import (
    bump_test_function,
    conservation_report,
    initial_regularity,
    l1_contraction_check,
    linf_bound_check,
    refine_study,
    solve_fpke,
    weak_residual,
)
from .particles import estimate_density, simulate_mv, snapshot_at
from .sde import (
    check_step_size,
    ensemble_marginal,
    freeze_coefficients,
    pathwise_gap,
    sample_brownian,
    solve_sde,
    weak_gradient_check,
)
from .serializers import ConvergenceRowSerializer, GapRowSerializer
from .stats import MatchReport, Metric, ProfileKind, heat_kernel_solution, l1_distance, w1_distance

logger = logging.getLogger(__name__)


def _on_lattice(t, dt):
    k = round(t / dt)
    return abs(k * dt - t) <= 1e-9 * max(1.0, t)


class Run:

    def __init__(self, config):
        self.config = config
        self.out_dir = config.output_dir
        self.grid = config.grid()
        self.model = config.build_model()
        self.u0 = config.initial_density(self.grid)
        self.conditions = []
        self.reports = {}
        self._solution = None

    @property
    def failures(self):
        failed = sum(not report.passed for report in self.conditions)
        failed += sum(not report.passed for reports in self.reports.values() for report in reports)
        return failed

    def _record(self, stage, reports):
        self.reports[stage] = reports
        exports.write_stage_reports(self.out_dir, {stage: reports})
        for report in reports:
            logger.info('%s %s %s value=%.6g threshold=%.6g %s', stage, report.metric.value,
                        report.verdict, report.value, report.threshold, report.context)

    # ------------------------------------------------------------------
    # check-conditions
    # ------------------------------------------------------------------

    def check_conditions(self):
        config = self.config
        r_max = audit_r_range(self.model, self.grid, config.T, self.u0.linf_norm)
        lattice = config.hypothesis_grid(r_max)
        reports = audit_all(self.model, lattice, supplementary=config.checks.supplementary)
        if config.checks.supplementary:
            reports.append(initial_regularity(self.model, self.u0))
        self.conditions = reports
        exports.write_conditions(self.out_dir, reports)
        for report in reports:
            logger.info('condition %s %s constant=%.6g', report.condition_id.value, report.verdict,
                        report.estimated_constant)
        return reports

    # ------------------------------------------------------------------
    # solve-fpke
    # ------------------------------------------------------------------

    @property
    def solution(self):
        if self._solution is None:
            config = self.config
            self._solution = solve_fpke(self.model, self.u0, config.T, config.dt, config.scheme_options())
            logger.info('FPKE solved: %d snapshots, dt=%.3e', self._solution.n_snapshots, self._solution.dt)
        return self._solution

    def _heat_oracle(self, sol):
        """Closed-form comparison for constant coefficients and gaussian initial data."""
        config = self.config
        if self.model.family != CoefficientFamily.CONSTANT or config.initial['kind'] != ProfileKind.GAUSSIAN.value:
            return None
        params = config.initial['params']
        exact = heat_kernel_solution(
            self.grid, params['mean'], params['sd'], sol.horizon,
            diffusivity=self.model.params['alpha'], drift=self.model.params['c'],
        )
        return MatchReport.evaluate(
            Metric.L1, l1_distance(sol.final, exact), config.checks.oracle_threshold,
            f'L1 error vs closed-form gaussian at t={sol.horizon:g}',
        )

    def solve(self):
        config = self.config
        checks = config.checks
        sol = self.solution
        exports.write_densities(self.out_dir / 'densities.csv', sol.snapshots())

        masses = sol.masses()
        l1_norms = sol.grid.dx * np.abs(sol.values).sum(axis=1)
        summary_columns = [sol.times, masses, sol.values.min(axis=1), sol.linf_trajectory(), l1_norms,
                           sol.boundary_masses()]
        header = ['t', 'mass', 'min_value', 'linf', 'l1_norm', 'boundary_mass']

        reports = []
        if checks.conservation:
            summary = conservation_report(sol)
            reports += [
                MatchReport.evaluate(Metric.L1, summary['mass_drift'], numerics_settings.MASS_TOL,
                                     'mass drift over all snapshots'),
                MatchReport.evaluate(Metric.L1, max(summary['l1_growth'], 0.0), numerics_settings.MASS_TOL,
                                     'L1 norm growth over all snapshots'),
                MatchReport.evaluate(Metric.LINF, max(-summary['min_value'], 0.0),
                                     numerics_settings.NEGATIVITY_TOL, 'negative part of the density'),
            ]
        u0_bar = config.initial_bar_density(self.grid)
        if u0_bar is not None:
            sol_bar = solve_fpke(self.model, u0_bar, config.T, config.dt, config.scheme_options())
            gap = sol.grid.dx * np.abs(sol.values - sol_bar.values).sum(axis=1)
            summary_columns.append(gap)
            header.append('l1_gap')
            if checks.contraction:
                reports.append(l1_contraction_check(
                    self.model, self.u0, u0_bar, config.T, config.dt,
                    config.scheme_options(), tolerance=checks.contraction_tolerance,
                ))
        if checks.linf:
            r_max = audit_r_range(self.model, self.grid, config.T, self.u0.linf_norm)
            lam = estimate_lambda(self.model, config.hypothesis_grid(r_max)).estimated_constant
            reports.append(linf_bound_check(sol, lam, checks.linf_tolerance))
        if checks.weak_residual:
            width = self.grid.length / 4.0
            phi = bump_test_function(0.5 * (self.grid.x_min + self.grid.x_max), width)
            residual = weak_residual(sol, phi, sol.horizon, self.model)
            reports.append(MatchReport.evaluate(
                Metric.L1, residual, checks.weak_residual_tolerance,
                f'weak-formulation residual at t={sol.horizon:g}',
            ))
        oracle = self._heat_oracle(sol)
        if oracle is not None:
            reports.append(oracle)

        exports.write_table(self.out_dir / 'fpke_summary.csv', header, summary_columns)
        levels = config.fpke['refine_levels']
        if levels:
            table = refine_study(self.model, self.u0, config.T, levels, config.dt, config.scheme_options())
            rows = ConvergenceRowSerializer(table.rows, many=True).data
            exports.write_csv(self.out_dir / 'convergence.csv', rows, ['level', 'n_cells', 'dt', 'self_distance'])
            logger.info('refinement study fitted order %.3f', table.fitted_order)
        self._record('fpke', reports)
        return sol

    # ------------------------------------------------------------------
    # simulate
    # ------------------------------------------------------------------

    def _times(self, sol, configured, dt, key):
        """Comparison times: on the stage's sampling lattice (or T) and stored in the FPKE solution.

        Configured times that miss either are configuration errors; of the
        defaults T/2 and T, only those that qualify are kept.
        """
        T = self.config.T

        def problem(t):
            if not (_on_lattice(t, dt) or abs(t - T) <= 1e-9 * max(1.0, T)):
                return f't={t:g} is not a multiple of dt={dt:g}'
            if not sol.has_snapshot(t):
                return (f't={t:g} is not a stored FPKE snapshot (spacing {sol.dt:g}); '
                        f'lower fpke.output_stride or pick stored times')
            return None

        if not configured:
            return [t for t in sorted({0.5 * T, T}) if problem(t) is None]
        times = sorted(set(configured))
        for t in times:
            message = problem(t)
            if message:
                raise ConfigurationError(message, key=key)
        return times

    def _sde_stage(self, sol):
        config = self.config
        options = config.sde
        dt = config.sde_dt
        if not _on_lattice(config.T, dt):
            raise ConfigurationError(f'T={config.T:g} is not a multiple of dt={dt:g}', key='sde.dt')
        n_steps = int(round(config.T / dt))
        times = self._times(sol, options.times, dt, 'sde.times')
        frozen = freeze_coefficients(self.model, sol)
        check_step_size(self.model, self.grid, float(sol.linf_trajectory().max()), dt)

        reports, marginals = [], []
        for integrator in options.integrators:
            for t in times:
                marginal = ensemble_marginal(frozen, options.n_paths, t, options.base_seed, dt,
                                             integrator, options.workers)
                marginals.append((integrator.value, marginal))
                target = sol.exact(t)
                reports.append(MatchReport.evaluate(
                    Metric.W1, w1_distance(marginal, target), config.checks.w1_threshold,
                    f'{integrator.value} ensemble of {options.n_paths} paths vs FPKE at t={t:g}',
                ))
        columns = exports.density_columns([m for _, m in marginals])
        tags = [name for name, m in marginals for _ in range(m.grid.n_cells)]
        exports.write_table(self.out_dir / 'marginals_sde.csv', ['integrator', 't', 'x', 'u'], [tags] + columns)

        if options.trajectory_paths:
            ids, t_col, x_col = [], [], []
            for path_id in range(options.trajectory_paths):
                noise = sample_brownian(n_steps, dt, options.noise_seed + path_id)
                path = solve_sde(frozen, noise, options.initial_seed + path_id, options.integrators[0])
                ids.extend([path_id] * path.times.size)
                t_col.append(path.times)
                x_col.append(path.states)
            exports.write_table(self.out_dir / 'trajectories.csv', ['path_id', 't', 'x'],
                                [ids, np.concatenate(t_col), np.concatenate(x_col)])

        if options.gap_levels:
            noise = sample_brownian(n_steps, dt, options.noise_seed)
            table = pathwise_gap(frozen, options.initial_seed, noise, options.gap_levels)
            exports.write_csv(self.out_dir / 'gap_table.csv', GapRowSerializer(table.rows, many=True).data,
                              ['level', 'dt', 'sup_gap'])
            reports.append(self._gap_report(table))
        gradients = weak_gradient_check(frozen, config.T)
        logger.info('weak gradients at t=%g: b discrepancy=%.3e sqrt(a) discrepancy=%.3e L2 norms %.6g, %.6g',
                    gradients.t, gradients.b_discrepancy, gradients.sqrt_a_discrepancy,
                    gradients.b_gradient_l2, gradients.sqrt_a_gradient_l2)
        return reports

    def _gap_report(self, table):
        """Pass when the gap vanishes at the finest level or decays with at least the configured log2 slope."""
        target = self.config.checks.gap_slope
        last = table.rows[-1].sup_gap
        if last == 0.0:
            deficit = 0.0
            context = 'pathwise gap vanishes at the finest level'
        else:
            slope = table.fitted_slope
            deficit = target - slope if np.isfinite(slope) else target
            context = f'pathwise gap fitted log2 decay slope {slope:.4g} (required {target:g})'
        return MatchReport.evaluate(Metric.LINF, max(deficit, 0.0), 0.0, context)

    def _particle_stage(self, sol):
        config = self.config
        options = config.particles
        dt = config.particles_dt
        stride = options.snapshot_stride
        times = self._times(sol, options.times, dt * stride, 'particles.times')
        cfg = config.estimator_config(self.grid)
        snapshots = simulate_mv(self.u0, self.model, config.T, dt, options.n, cfg, options.seed,
                                snapshot_stride=stride, workers=options.workers)
        reports, densities = [], []
        for t in times:
            estimate = estimate_density(snapshot_at(snapshots, t), cfg)
            densities.append(estimate)
            reports.append(MatchReport.evaluate(
                Metric.W1, w1_distance(estimate, sol.exact(t)), config.checks.particle_threshold,
                f'{cfg.kind.value} estimate of {options.n} particles vs FPKE at t={t:g}',
            ))
        exports.write_densities(self.out_dir / 'marginals_particles.csv', densities)
        if options.output_particles:
            ids = np.concatenate([np.arange(e.size) for e in snapshots])
            t_col = np.concatenate([np.full(e.size, e.time_stamp) for e in snapshots])
            x_col = np.concatenate([e.positions for e in snapshots])
            exports.write_table(self.out_dir / 'particles.csv', ['t', 'particle_id', 'x'], [t_col, ids, x_col])
        return reports

    def simulate(self):
        config = self.config
        if not (config.sde.enabled or config.particles.enabled):
            raise ConfigurationError('enable sde or particles to simulate', key='sde.enabled')
        sol = self.solution
        if config.sde.enabled:
            self._record('sde', self._sde_stage(sol))
        if config.particles.enabled:
            self._record('particles', self._particle_stage(sol))

    def verify(self):
        if self.config.checks.conditions:
            self.check_conditions()
        self.solve()
        if self.config.sde.enabled or self.config.particles.enabled:
            self.simulate()

    def finish(self):
        exports.render_report(self.out_dir)
        return self.failures
