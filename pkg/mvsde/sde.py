"""
The linearized equation SDE_u

    dX = b(t, X, u(t, X)) dt + sqrt(2 a(t, X, u(t, X))) dW

with the FPKE solution u frozen into the coefficients.

``solve_sde`` is a deterministic map from (initial seed, Brownian path) to a
trajectory, i.e. a concrete version of the strong-solution functional
F(xi, W). Pathwise uniqueness cannot be tested literally; ``pathwise_gap``
couples two integrators on the same bridge-refined noise and watches their
sup-distance shrink as dt -> 0.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List

import numpy as np

from . import rng
from .conf import numerics_settings
from .exceptions import ConfigurationError, IntegrationFailureError, StabilityError
from .stats import counts_to_density, fitted_log2_slope

logger = logging.getLogger(__name__)


class Integrator(str, Enum):
    EULER = 'euler'
    HEUN_DRIFT = 'heun-drift'


@dataclass(frozen=True, eq=False)
class BrownianPath:
    dt: float
    n_steps: int
    increments: np.ndarray
    seed: int
    level: int = 0
    # W(t_k), k = 0..n_steps; stored so refinement keeps coarse values bit-exact
    values: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        increments = np.asarray(self.increments, dtype=float)
        values = self.values
        if values is None:
            values = np.concatenate(([0.0], np.cumsum(increments)))
        values = np.asarray(values, dtype=float)
        increments.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, 'increments', increments)
        object.__setattr__(self, 'values', values)

    @property
    def horizon(self):
        return self.dt * self.n_steps

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)


def sample_brownian(n_steps, dt, seed, level=0):
    n_steps = int(n_steps)
    if n_steps == 0:
        return BrownianPath(dt, 0, np.zeros(0), seed, level)
    increments = rng.stream(seed, rng.NOISE, level).normal(0.0, np.sqrt(dt), n_steps)
    return BrownianPath(dt, n_steps, increments, seed, level)


def refine_brownian(path):
    """Brownian-bridge midpoint refinement: 2n steps of dt/2, coarse W(t_k) kept exactly."""
    n = path.n_steps
    fine = np.empty(2 * n + 1)
    fine[0::2] = path.values
    if n:
        generator = rng.stream(path.seed, rng.BRIDGE, path.level + 1)
        bridge = generator.normal(0.0, np.sqrt(path.dt / 4.0), n)
        fine[1::2] = 0.5 * (path.values[:-1] + path.values[1:]) + bridge
    return BrownianPath(path.dt / 2.0, 2 * n, np.diff(fine), path.seed, path.level + 1, values=fine)


class FrozenCoefficients:
    """b^u and sqrt(2 a^u) with u piecewise-linear in x and left-endpoint constant in t.

    Read-only once built; evaluations that clamp the diffusion at gamma0
    report their count to the caller.
    """

    def __init__(self, model, solution):
        self.model = model
        self.solution_ref = solution
        self._sqrt_floor = np.sqrt(2.0 * model.gamma0)

    def _clamp(self, a):
        below = int(np.count_nonzero(a < self.model.gamma0))
        if below:
            a = np.maximum(a, self.model.gamma0)
        return np.maximum(np.sqrt(2.0 * a), self._sqrt_floor), below

    def density(self, t, x):
        return self.solution_ref.at(t).evaluate(x)

    def b_u(self, t, x):
        return self.model.eval_b(t, x, self.density(t, x))

    def a_u(self, t, x):
        return self.model.eval_a(t, x, self.density(t, x))

    def sqrt2a_u(self, t, x):
        sigma, below = self._clamp(self.a_u(t, x))
        if below:
            logger.warning('diffusion below gamma0 at %d points clamped to the floor', below)
        return sigma

    def coefficients(self, t, x):
        """(b^u, sqrt(2 a^u), clamped count) sharing one density lookup."""
        u = self.density(t, x)
        sigma, below = self._clamp(self.model.eval_a(t, x, u))
        return self.model.eval_b(t, x, u), sigma, below


def freeze_coefficients(model, solution):
    if solution.model_id != model.model_id:
        raise ConfigurationError(
            f'solution was produced by {solution.model_id}, not {model.model_id}', key='coefficients'
        )
    return FrozenCoefficients(model, solution)


def check_step_size(model, grid, density_sup, dt, t=0.0):
    """Sanity rule for stochastic stages: one step may not move a path across an eighth of the box."""
    r = np.linspace(0.0, max(float(density_sup), 0.0), 17)
    x = grid.edges[:, None]
    sup_a = float(np.max(model.eval_a(t, x, r)))
    sup_b = float(np.max(np.abs(model.eval_b(t, x, r))))
    reach = sup_b * dt + np.sqrt(2.0 * sup_a * dt)
    if reach > grid.length / 8.0:
        raise StabilityError(
            f'dt={dt:g} lets one step travel {reach:.3g}, more than an eighth of the box ({grid.length / 8:.3g})'
        )


@dataclass(frozen=True, eq=False)
class SdePath:
    times: np.ndarray
    states: np.ndarray
    initial_seed: int
    noise_seed: int
    integrator: Integrator
    clamped: int = 0


def sample_initial(solution, seed, size, index=None):
    key = () if index is None else (index,)
    generator = rng.stream(seed, rng.INITIAL, *key)
    return solution.initial.sample(generator, size)


def _integrate(frozen, x0, increments, dt, integrator, keep_path=False, step_offset=0):
    """Vectorized Euler / Heun-drift over a batch of paths.

    ``increments`` has shape (n_steps, n_paths). Returns the final states, or
    the full (n_steps + 1, n_paths) trajectory when ``keep_path`` is set,
    together with the number of diffusion evaluations clamped at gamma0.
    """
    integrator = Integrator(integrator)
    x = np.array(x0, dtype=float)
    n_steps = increments.shape[0]
    path = [x.copy()] if keep_path else None
    clamped = 0
    for k in range(n_steps):
        t = k * dt
        drift, diffusion, below = frozen.coefficients(t, x)
        clamped += below
        noise = diffusion * increments[k]
        if integrator == Integrator.EULER:
            x = x + drift * dt + noise
        else:
            predictor = x + drift * dt + noise
            drift_next = frozen.b_u(t + dt, predictor)
            x = x + 0.5 * (drift + drift_next) * dt + noise
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x))[0])
            raise IntegrationFailureError(step=k + 1 + step_offset, particle=bad if x.size > 1 else None)
        if keep_path:
            path.append(x.copy())
    return (np.array(path) if keep_path else x), clamped


def _check_horizon(frozen, noise):
    horizon = frozen.solution_ref.horizon
    if abs(noise.horizon - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigurationError(
            f'noise covers [0, {noise.horizon:g}] but the frozen solution covers [0, {horizon:g}]',
            key='sde.dt',
        )


def solve_sde(frozen, noise, initial_seed, integrator=Integrator.EULER, initial_state=None):
    _check_horizon(frozen, noise)
    if initial_state is None:
        x0 = sample_initial(frozen.solution_ref, initial_seed, 1)
    else:
        x0 = np.array([float(initial_state)])
    states, clamped = _integrate(frozen, x0, noise.increments[:, None], noise.dt, integrator, keep_path=True)
    if clamped:
        logger.warning('%d diffusion evaluations clamped to gamma0 along the path', clamped)
    return SdePath(noise.times, states[:, 0], initial_seed, noise.seed, Integrator(integrator), clamped)


@dataclass(frozen=True)
class GapRow:
    level: int
    dt: float
    sup_gap: float


@dataclass(frozen=True)
class GapTable:
    rows: List[GapRow]
    fitted_slope: float

    @property
    def identically_zero(self):
        return all(row.sup_gap == 0.0 for row in self.rows)


def pathwise_gap(frozen, initial_seed, noise, levels, initial_state=None):
    """sup_k |X_euler(t_k) - X_heun(t_k)| on the same noise at successive bridge refinements."""
    if levels < 2:
        raise ConfigurationError('pathwise_gap needs at least 2 levels', key='sde.gap_levels')
    rows = []
    path = noise
    for level in range(levels):
        if level:
            path = refine_brownian(path)
        euler = solve_sde(frozen, path, initial_seed, Integrator.EULER, initial_state)
        heun = solve_sde(frozen, path, initial_seed, Integrator.HEUN_DRIFT, initial_state)
        gap = float(np.max(np.abs(euler.states - heun.states)))
        rows.append(GapRow(level, path.dt, gap))
        logger.debug('pathwise gap level %d dt=%.3e gap=%.3e', level, path.dt, gap)
    return GapTable(rows, -fitted_log2_slope([row.sup_gap for row in rows]))


def _blocks(n, workers):
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _ensemble_block(frozen, lo, hi, n_steps, dt, base_seed, integrator):
    """Final states for paths lo..hi-1; every path draws from its own (base_seed, index) streams."""
    x0 = np.empty(hi - lo)
    increments = np.empty((n_steps, hi - lo))
    initial = frozen.solution_ref.initial
    scale = np.sqrt(dt)
    for j, index in enumerate(range(lo, hi)):
        x0[j] = initial.sample(rng.stream(base_seed, rng.INITIAL, index), 1)[0]
        if n_steps:
            increments[:, j] = rng.stream(base_seed, rng.NOISE, index, 0).normal(0.0, scale, n_steps)
    return _integrate(frozen, x0, increments, dt, integrator)


def ensemble_states(frozen, n_paths, t, base_seed, dt, integrator=Integrator.EULER, workers=None):
    n_steps = int(round(t / dt)) if t > 0 else 0
    if n_steps and abs(n_steps * dt - t) > 1e-9 * max(1.0, t):
        raise ConfigurationError(f't={t:g} is not a multiple of dt={dt:g}', key='sde.times')
    workers = workers or numerics_settings.WORKERS
    blocks = _blocks(n_paths, workers)
    if len(blocks) == 1:
        parts = [_ensemble_block(frozen, 0, n_paths, n_steps, dt, base_seed, integrator)]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            futures = [
                pool.submit(_ensemble_block, frozen, lo, hi, n_steps, dt, base_seed, integrator)
                for lo, hi in blocks
            ]
            parts = [future.result() for future in futures]
    clamped = sum(below for _, below in parts)
    if clamped:
        logger.warning('%d diffusion evaluations clamped to gamma0 over %d paths', clamped, n_paths)
    return np.concatenate([states for states, _ in parts])


def ensemble_marginal(frozen, n_paths, t, base_seed, dt=None, integrator=Integrator.EULER, workers=None):
    """Histogram of X(t) over n_paths independent solves, on the solution grid."""
    grid = frozen.solution_ref.grid
    dt = dt or frozen.solution_ref.dt
    states = ensemble_states(frozen, n_paths, t, base_seed, dt, integrator, workers)
    outside = int(np.count_nonzero(~grid.inside(states)))
    if outside:
        logger.warning('%d of %d paths outside the box at t=%g counted in boundary cells', outside, n_paths, t)
    # integer counts merge exactly whatever the block order
    counts = np.bincount(grid.cell_index(states), minlength=grid.n_cells)
    return counts_to_density(counts, grid, t)


@dataclass(frozen=True)
class WeakGradientReport:
    t: float
    b_discrepancy: float
    sqrt_a_discrepancy: float
    b_gradient_l2: float
    sqrt_a_gradient_l2: float


def _chain_rule_gradients(frozen, t, x, u, du):
    model = frozen.model
    db = model.eval_db_dx(t, x, u) + model.eval_db_dr(t, x, u) * du
    a = np.maximum(model.eval_a(t, x, u), model.gamma0)
    da = model.eval_da_dx(t, x, u) + model.eval_da_dr(t, x, u) * du
    return db, da / (2.0 * np.sqrt(a))


def weak_gradient_check(frozen, t):
    """Differenced x-derivatives of b^u and sqrt(a^u) against the Sobolev chain rule at the cell faces."""
    solution = frozen.solution_ref
    grid = solution.grid
    k = solution.index_at(t)
    ts = float(solution.times[k])
    centers = grid.centers
    u = solution.values[k]
    model = frozen.model
    b_centers = model.eval_b(ts, centers, u)
    sqrt_a_centers = np.sqrt(np.maximum(model.eval_a(ts, centers, u), model.gamma0))
    diff_b = np.diff(b_centers) / grid.dx
    diff_sqrt_a = np.diff(sqrt_a_centers) / grid.dx
    faces = grid.faces
    u_face = 0.5 * (u[1:] + u[:-1])
    du_face = np.diff(u) / grid.dx
    chain_b, chain_sqrt_a = _chain_rule_gradients(frozen, ts, faces, u_face, du_face)

    # L2([0, T] x box) norms of both weak gradients over all snapshots
    b_sq, a_sq = 0.0, 0.0
    for j in range(solution.n_snapshots):
        uj = solution.values[j]
        tj = float(solution.times[j])
        gb, ga = _chain_rule_gradients(
            frozen, tj, faces, 0.5 * (uj[1:] + uj[:-1]), np.diff(uj) / grid.dx)
        weight = solution.dt if solution.n_snapshots > 1 else 1.0
        b_sq += weight * grid.dx * float(np.sum(gb * gb))
        a_sq += weight * grid.dx * float(np.sum(ga * ga))
    return WeakGradientReport(
        t=ts,
        b_discrepancy=float(np.max(np.abs(diff_b - chain_b))),
        sqrt_a_discrepancy=float(np.max(np.abs(diff_sqrt_a - chain_sqrt_a))),
        b_gradient_l2=float(np.sqrt(b_sq)),
        sqrt_a_gradient_l2=float(np.sqrt(a_sq)),
    )
