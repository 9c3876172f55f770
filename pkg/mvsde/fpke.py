"""
Conservative finite-volume solver for the nonlinear Fokker-Planck-Kolmogorov
equation

    du/dt + d/dx (b(t, x, u) u) - d2/dx2 (a(t, x, u) u) = 0

on a truncated box with zero-flux boundaries, plus checkers for the weak
formulation and the quantitative properties of its probability solutions
(mass, L1 norm, L1 contraction, L-infinity growth bound).

The update is always in divergence form

    u_i <- u_i - dt/dx (F_{i+1/2} - F_{i-1/2}),  F = b* (upwind) - d(beta)/dx

so mass changes only through rounding.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import (
    ConditionId,
    ConditionReport,
    check_nondegeneracy,
    default_hypothesis_grid,
    estimate_lambda,
    eval_beta,
)
from .conf import numerics_settings
from .exceptions import (
    ConfigurationError,
    IterationFailureError,
    PreconditionError,
    SchemeFailureError,
    StabilityError,
)
from .grids import FpkeSolution, GridDensity
from .stats import MatchReport, Metric, fitted_log2_slope, l1_distance

logger = logging.getLogger(__name__)


class SchemeMode(str, Enum):
    EXPLICIT = 'explicit'
    SEMI_IMPLICIT = 'semi-implicit'


@dataclass(frozen=True)
class SchemeOptions:
    mode: SchemeMode = SchemeMode.EXPLICIT
    # keep every n-th step; the solution's dt is the spacing of kept snapshots
    store_every: int = 1
    final_only: bool = False
    check_nondegeneracy: bool = True
    # density bound used by the stability rule; defaults to Lambda T + ||u0||_inf
    r_max: float = None


def density_bound(model, grid, T, u0):
    """Lambda(b, beta) T + ||u0||_inf, the proved bound on the solution."""
    u0_sup = max(u0.linf_norm, 1e-12)
    audit_grid = default_hypothesis_grid(T, grid, 2.0 * max(u0_sup, 1.0))
    lam = estimate_lambda(model, audit_grid).estimated_constant
    return lam * T + u0_sup


def _coefficient_sups(model, grid, T, r_max):
    t = np.linspace(0.0, T, 5) if T > 0 else np.array([0.0])
    r = np.linspace(0.0, r_max, 33)
    tt, xx, rr = np.meshgrid(t, grid.edges, r, indexing='ij')
    sup_a = float(np.max(model.eval_a(tt, xx, rr)))
    sup_b = float(np.max(np.abs(model.eval_b(tt, xx, rr))))
    return sup_a, sup_b


def stable_time_step(model, grid, T, r_max, mode=SchemeMode.EXPLICIT):
    """CFL rule dt <= safety * min(dx^2 / (2 sup a), dx / sup |b|); implicit diffusion drops the first term."""
    sup_a, sup_b = _coefficient_sups(model, grid, T, r_max)
    dx = grid.dx
    advective = dx / sup_b if sup_b > 0 else np.inf
    diffusive = dx * dx / (2.0 * sup_a) if SchemeMode(mode) == SchemeMode.EXPLICIT else np.inf
    return numerics_settings.CFL_SAFETY * min(advective, diffusive)


def face_fluxes(model, grid, t, u, include_diffusion=True):
    """Total flux at every cell face; the two boundary faces carry zero flux."""
    faces = grid.faces
    left, right = u[:-1], u[1:]
    velocity = model.eval_b(t, faces, 0.5 * (left + right))
    upwind = np.where(velocity >= 0.0, left, right)
    flux = np.zeros(grid.n_cells + 1)
    flux[1:-1] = model.eval_b(t, faces, upwind) * upwind
    if include_diffusion:
        beta = eval_beta(model, t, grid.centers, u)
        flux[1:-1] -= (beta[1:] - beta[:-1]) / grid.dx
    return flux


def _divergence(flux, dx):
    return (flux[1:] - flux[:-1]) / dx


def _diffusion_operator(beta, dx):
    """Second difference of beta with zero-flux ends."""
    out = np.empty_like(beta)
    out[1:-1] = beta[2:] - 2.0 * beta[1:-1] + beta[:-2]
    out[0] = beta[1] - beta[0]
    out[-1] = beta[-2] - beta[-1]
    return out / (dx * dx)


def _implicit_diffusion(model, grid, t, rhs, dt, step):
    """Solve v - dt D2 beta(t, x, v) = rhs by damped Newton with a tridiagonal Jacobian."""
    x = grid.centers
    k = dt / (grid.dx * grid.dx)
    weights = np.full(grid.n_cells, 2.0)
    weights[0] = weights[-1] = 1.0
    v = rhs.copy()
    residual = v - dt * _diffusion_operator(eval_beta(model, t, x, v), grid.dx) - rhs
    norm = np.max(np.abs(residual))
    for iteration in range(1, numerics_settings.NEWTON_MAX_ITER + 1):
        slope = model.eval_dbeta_dr(t, x, v)
        bands = np.zeros((3, grid.n_cells))
        bands[0, 1:] = -k * slope[1:]
        bands[1, :] = 1.0 + k * weights * slope
        bands[2, :-1] = -k * slope[:-1]
        delta = solve_banded((1, 1), bands, -residual)
        damping = 1.0
        while True:
            candidate = v + damping * delta
            cand_residual = candidate - dt * _diffusion_operator(
                eval_beta(model, t, x, candidate), grid.dx) - rhs
            cand_norm = np.max(np.abs(cand_residual))
            if cand_norm <= norm or damping < 1e-3:
                break
            damping *= 0.5
        v, residual, norm = candidate, cand_residual, cand_norm
        if damping * np.max(np.abs(delta)) <= numerics_settings.NEWTON_TOL * max(1.0, np.max(np.abs(v))):
            return v, iteration
        if not np.isfinite(norm):
            break
    raise IterationFailureError(
        f'Newton did not reach {numerics_settings.NEWTON_TOL:g} in '
        f'{numerics_settings.NEWTON_MAX_ITER} iterations (residual {norm:.3e})',
        step=step,
    )


def _step_count(T, dt, store_every):
    raw = T / (dt * store_every)
    blocks = max(1, int(np.ceil(raw - 1e-9)))
    return blocks * store_every


def solve_fpke(model, u0, T, dt, opts=None):
    opts = opts or SchemeOptions()
    mode = SchemeMode(opts.mode)
    u0.require_probability(numerics_settings.MASS_TOL)
    grid = u0.grid
    if T < 0 or dt < 0:
        raise ConfigurationError('T and dt must be nonnegative', key='dt')
    if T == 0 or dt == 0:
        return FpkeSolution(grid, 0.0, u0.values[None, :], model.model_id, model=model)

    r_max = opts.r_max if opts.r_max is not None else density_bound(model, grid, T, u0)
    if opts.check_nondegeneracy:
        audit = check_nondegeneracy(model, default_hypothesis_grid(T, grid, max(r_max, 1.0)))
        if not audit.passed:
            raise PreconditionError(f'model fails the nondegeneracy audit: {audit.detail}')
    limit = stable_time_step(model, grid, T, r_max, mode)
    if dt > limit * (1.0 + 1e-12):
        raise StabilityError(
            f'dt={dt:g} violates the stability rule dt <= {numerics_settings.CFL_SAFETY:g} * '
            f'min(dx^2/(2 sup a), dx/sup|b|) = {limit:.6g} ({mode.value} mode)'
        )

    store_every = max(1, int(opts.store_every))
    n_steps = _step_count(T, dt, store_every)
    step_dt = T / n_steps
    if opts.final_only:
        store_every = n_steps
    logger.debug('solving FPKE: mode=%s n_cells=%d n_steps=%d dt=%.3e', mode.value,
                 grid.n_cells, n_steps, step_dt)

    kept = [u0.values.copy()]
    u = u0.values.copy()
    tol = numerics_settings.NEGATIVITY_TOL
    report_every = max(1, n_steps // 10)
    for n in range(n_steps):
        t = n * step_dt
        if mode == SchemeMode.EXPLICIT:
            u = u - step_dt * _divergence(face_fluxes(model, grid, t, u), grid.dx)
        else:
            rhs = u - step_dt * _divergence(
                face_fluxes(model, grid, t, u, include_diffusion=False), grid.dx)
            u, _ = _implicit_diffusion(model, grid, t + step_dt, rhs, step_dt, n + 1)
        if not np.all(np.isfinite(u)):
            raise SchemeFailureError('non-finite density value', step=n + 1)
        low = float(u.min())
        if low < -tol:
            raise SchemeFailureError(f'negative density {low:.3e}', step=n + 1)
        if (n + 1) % store_every == 0:
            kept.append(u.copy())
        if (n + 1) % report_every == 0:
            logger.debug('step %d/%d mass=%.15f', n + 1, n_steps, grid.dx * u.sum())

    solution = FpkeSolution(grid, step_dt * store_every, np.array(kept), model.model_id, model=model)
    boundary = solution.boundary_masses()
    if boundary.max() > numerics_settings.BOUNDARY_MASS_ALARM:
        logger.warning('boundary-cell mass %.3e exceeds %.1e; the box may be too small',
                       boundary.max(), numerics_settings.BOUNDARY_MASS_ALARM)
    return solution


# ---------------------------------------------------------------------------
# Weak formulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    value: Callable
    d1: Callable
    d2: Callable
    support: tuple


def bump_test_function(center=0.0, width=1.0):
    """Smooth compactly supported bump exp(-1 / (1 - z^2)), z = (x - center) / width."""

    def parts(x):
        z = (np.asarray(x, dtype=float) - center) / width
        inside = np.abs(z) < 1.0
        s = np.where(inside, 1.0 - z * z, 1.0)
        psi = np.where(inside, np.exp(-1.0 / s), 0.0)
        return z, s, psi

    def value(x):
        return parts(x)[2]

    def d1(x):
        z, s, psi = parts(x)
        return -2.0 * z * psi / (s * s) / width

    def d2(x):
        z, s, psi = parts(x)
        return psi * (4.0 * z * z / s ** 4 - 2.0 / s ** 2 - 8.0 * z * z / s ** 3) / (width * width)

    return TestFunction(value, d1, d2, (center - width, center + width))


def _snapshot_index(sol, t):
    k = sol.index_at(t)
    if not sol.has_snapshot(t):
        raise PreconditionError(f't={t!r} is not a snapshot time')
    return k


def weak_residual(sol, phi, t, model=None):
    model = model or sol.model
    lo, hi = phi.support
    if lo <= sol.grid.x_min or hi >= sol.grid.x_max:
        raise PreconditionError('test function support must lie strictly inside the box')
    k = _snapshot_index(sol, t)
    x = sol.grid.centers
    dx = sol.grid.dx
    phi0, phi1, phi2 = phi.value(x), phi.d1(x), phi.d2(x)
    mass_term = dx * float(np.dot(phi0, sol.values[k]) - np.dot(phi0, sol.values[0]))
    integrand = np.empty(k + 1)
    block = 256
    for start in range(0, k + 1, block):
        stop = min(k + 1, start + block)
        u = sol.values[start:stop]
        s = sol.times[start:stop][:, None]
        drift = model.eval_b(s, x, u) * phi1
        diffusion = model.eval_a(s, x, u) * phi2
        integrand[start:stop] = dx * np.sum((drift + diffusion) * u, axis=1)
    if k == 0:
        time_integral = 0.0
    else:
        time_integral = float(np.sum(0.5 * (integrand[1:] + integrand[:-1])) * sol.dt)
    return abs(mass_term - time_integral)


def moment_increments(sol, phi):
    """Max over consecutive snapshots of |d/dt integral(phi u)|, a discrete narrow-continuity check."""
    if sol.n_snapshots < 2:
        return 0.0
    moments = sol.grid.dx * (sol.values @ phi.value(sol.grid.centers))
    return float(np.max(np.abs(np.diff(moments))) / sol.dt)


# ---------------------------------------------------------------------------
# Quantitative properties of probability solutions
# ---------------------------------------------------------------------------

def l1_trajectory(sol):
    return sol.grid.dx * np.sum(np.abs(sol.values), axis=1)


def pairwise_l1(sol, other):
    sol.grid.check_same(other.grid)
    return sol.grid.dx * np.sum(np.abs(sol.values - other.values), axis=1)


def coarse_self_distance(model, u0, T, dt, opts=None):
    """L1 distance at T between the run on u0's grid and the run on the grid with half the cells."""
    opts = opts or SchemeOptions()
    fine_opts = SchemeOptions(opts.mode, final_only=True, check_nondegeneracy=False, r_max=opts.r_max)
    fine = solve_fpke(model, u0, T, dt, fine_opts).final
    coarse = solve_fpke(model, u0.restrict(), T, dt, fine_opts).final
    return l1_distance(coarse, fine.restrict())


def l1_contraction_check(model, u0, u0_bar, T, dt, opts=None, tolerance=None):
    opts = opts or SchemeOptions()
    u0.grid.check_same(u0_bar.grid)
    sol = solve_fpke(model, u0, T, dt, opts)
    sol_bar = solve_fpke(model, u0_bar, T, dt, opts)
    distances = pairwise_l1(sol, sol_bar)
    excess = float(np.max(distances) - distances[0])
    if tolerance is None:
        tolerance = max(1e-3, 5.0 * coarse_self_distance(model, u0, T, dt, opts))
    return MatchReport.evaluate(
        Metric.L1, max(excess, 0.0), tolerance,
        f'L1 contraction excess {excess:.3e} over {sol.n_snapshots} snapshots',
    )


def linf_bound_check(sol, lambda_hat, tolerance=None):
    if tolerance is None:
        tolerance = 1e-6 + 2.0 * sol.grid.dx
    u0_sup = sol.initial.linf_norm
    peak = float(np.max(sol.linf_trajectory()))
    bound = lambda_hat * sol.horizon + u0_sup
    return MatchReport.evaluate(
        Metric.LINF, peak, bound + tolerance,
        f'max ||u(t)||_inf {peak:.6g} vs Lambda T + ||u0||_inf = {bound:.6g}',
    )


def conservation_report(sol):
    """Mass drift, minimum value and L1-norm growth across all snapshots."""
    masses = sol.masses()
    l1 = l1_trajectory(sol)
    return {
        'mass_drift': float(np.max(np.abs(masses - masses[0]))),
        'min_value': float(sol.values.min()),
        'l1_growth': float(np.max(l1 - l1[0])),
        'max_boundary_mass': float(sol.boundary_masses().max()),
    }


def initial_regularity(model, u0, factor=1.25):
    """Discrete H1 norm of beta(0, ., u0) on the grid and on its coarsening; growth flags u0 outside D0."""

    def h1(density):
        grid = density.grid
        beta = eval_beta(model, 0.0, grid.centers, density.values)
        gradient = np.diff(beta) / grid.dx
        return float(np.sqrt(grid.dx * (np.sum(beta * beta) + np.sum(gradient * gradient)))), gradient

    fine, gradient = h1(u0)
    coarse, _ = h1(u0.restrict())
    ratio = fine / coarse if coarse > 0 else 1.0
    passed = ratio <= factor
    witness = None
    if not passed:
        i = int(np.argmax(np.abs(gradient)))
        witness = (0.0, float(u0.grid.faces[i]), float(u0.values[i]), float(u0.values[i + 1]))
    return ConditionReport(
        ConditionId.D0_PROXY, bool(passed), fine, witness,
        f'H1 norm of beta(0, u0): {fine:.6g} (fine) vs {coarse:.6g} (coarse), ratio {ratio:.3f}',
    )


@dataclass(frozen=True)
class ConvergenceRow:
    level: int
    n_cells: int
    dt: float
    self_distance: float


@dataclass(frozen=True)
class ConvergenceTable:
    rows: List[ConvergenceRow] = field(default_factory=list)
    fitted_order: float = float('nan')


def _prolong(density):
    grid = density.grid.refine()
    return GridDensity(grid, np.repeat(density.values, 2), density.time_stamp)


def refine_study(model, initial, T, levels, dt, opts=None, grid=None):
    """Halve dx and dt per level and report the L1 self-distance between consecutive levels.

    ``initial`` is either a GridDensity on the coarsest grid (prolonged
    piecewise-constantly) or a callable building the initial density on a
    grid, in which case ``grid`` is the coarsest grid.
    """
    if levels < 2:
        raise ConfigurationError('refine_study needs at least 2 levels', key='fpke.refine_levels')
    opts = opts or SchemeOptions()
    mode = SchemeMode(opts.mode)
    densities = []
    if isinstance(initial, GridDensity):
        densities.append(initial)
        for _ in range(levels):
            densities.append(_prolong(densities[-1]))
    else:
        if grid is None:
            raise ConfigurationError('callable initial data must expose a base grid', key='initial')
        for level in range(levels + 1):
            densities.append(initial(grid))
            grid = grid.refine()

    r_max = opts.r_max if opts.r_max is not None else density_bound(model, densities[0].grid, T, densities[0])
    finals, steps = [], []
    for level, u0 in enumerate(densities):
        level_dt = dt / 2 ** level
        if mode == SchemeMode.EXPLICIT:
            level_dt = min(level_dt, stable_time_step(model, u0.grid, T, r_max, mode))
        level_opts = SchemeOptions(mode, final_only=True, check_nondegeneracy=level == 0, r_max=r_max)
        sol = solve_fpke(model, u0, T, level_dt, level_opts)
        finals.append(sol.final)
        steps.append(T / _step_count(T, level_dt, 1))
        logger.info('refine level %d: n_cells=%d dt=%.3e', level, u0.grid.n_cells, steps[-1])

    rows = []
    for level in range(1, len(finals)):
        distance = l1_distance(finals[level - 1], finals[level].restrict())
        rows.append(ConvergenceRow(level, finals[level].grid.n_cells, steps[level], distance))
    order = -fitted_log2_slope([row.self_distance for row in rows])
    return ConvergenceTable(rows, order)
