"""
Self-consistent McKean-Vlasov particle system.

Every step estimates the empirical density once, then moves each particle
with coefficients evaluated at that estimate:

    X_i <- X_i + b(t, X_i, u_hat(X_i)) dt + sqrt(2 a(t, X_i, u_hat(X_i))) dW_i

The estimate is read as a cell-average function (value of the containing
cell, zero outside the box), so a single particle sees 1/dx.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import rng
from .conf import numerics_settings
from .exceptions import ConfigurationError, IntegrationFailureError, PreconditionError
from .grids import GridDensity
from .sde import check_step_size
from .stats import histogram_density

logger = logging.getLogger(__name__)


class EstimatorKind(str, Enum):
    HISTOGRAM = 'histogram'
    GAUSSIAN_KERNEL = 'gaussian-kernel'


class BandwidthRule(str, Enum):
    FIXED = 'fixed'
    SCOTT = 'scott'


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: np.ndarray
    time_stamp: float
    base_seed: int

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float).ravel()
        if positions.size < 1:
            raise PreconditionError('a particle ensemble needs at least one particle')
        if not np.all(np.isfinite(positions)):
            raise PreconditionError('particle positions must be finite')
        positions.setflags(write=False)
        object.__setattr__(self, 'positions', positions)

    @property
    def size(self):
        return self.positions.size


@dataclass(frozen=True)
class EstimatorConfig:
    grid: object
    kind: EstimatorKind = EstimatorKind.HISTOGRAM
    bandwidth: float = None
    bandwidth_rule: BandwidthRule = BandwidthRule.FIXED

    def __post_init__(self):
        object.__setattr__(self, 'kind', EstimatorKind(self.kind))
        object.__setattr__(self, 'bandwidth_rule', BandwidthRule(self.bandwidth_rule))
        if (self.kind == EstimatorKind.GAUSSIAN_KERNEL and self.bandwidth_rule == BandwidthRule.FIXED
                and not (self.bandwidth and self.bandwidth > 0)):
            raise ConfigurationError('a fixed kernel bandwidth must be positive', key='particles.bandwidth')


def scott_bandwidth(positions):
    return float(np.std(positions)) * positions.size ** (-0.2)


def kernel_bandwidth(positions, cfg):
    if cfg.bandwidth_rule == BandwidthRule.FIXED:
        return float(cfg.bandwidth)
    bandwidth = scott_bandwidth(positions)
    # degenerate spread (one particle or a single point mass)
    return bandwidth if bandwidth > 0 else cfg.grid.dx


def estimate_density(ens, cfg):
    positions = np.asarray(getattr(ens, 'positions', ens), dtype=float)
    if positions.size == 0:
        raise PreconditionError('cannot estimate a density from zero particles')
    time_stamp = getattr(ens, 'time_stamp', 0.0)
    grid = cfg.grid
    histogram = histogram_density(positions, grid, time_stamp)
    if cfg.kind == EstimatorKind.HISTOGRAM:
        return histogram

    # binned KDE: the cell histogram convolved with a sampled gaussian kernel
    sigma = kernel_bandwidth(positions, cfg) / grid.dx
    smoothed = gaussian_filter1d(histogram.values, sigma, mode='constant', truncate=6.0)
    smoothed = np.clip(smoothed, 0.0, None)
    mass = grid.dx * float(np.sum(smoothed))
    return GridDensity(grid, smoothed / mass, time_stamp)


def _blocks(n, workers):
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _move(model, t, dt, x, density, increments):
    r = density.cell_value(x)
    drift = model.eval_b(t, x, r)
    diffusion = np.sqrt(2.0 * np.maximum(model.eval_a(t, x, r), model.gamma0))
    return x + drift * dt + diffusion * increments


def step_mv(ens, model, dt, cfg, step_index, workers=None):
    """One Euler step of the interacting system; the density estimate is frozen for the whole step."""
    density = estimate_density(ens, cfg)
    t = ens.time_stamp
    check_step_size(model, cfg.grid, density.linf_norm, dt, t)
    n = ens.size
    # one vector per (base_seed, step); entry i is particle i's increment
    increments = rng.stream(ens.base_seed, rng.PARTICLE_NOISE, step_index).normal(0.0, np.sqrt(dt), n)
    x = ens.positions
    blocks = _blocks(n, workers or numerics_settings.WORKERS)
    if len(blocks) == 1:
        moved = _move(model, t, dt, x, density, increments)
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            futures = [
                pool.submit(_move, model, t, dt, x[lo:hi], density, increments[lo:hi])
                for lo, hi in blocks
            ]
            moved = np.concatenate([future.result() for future in futures])
    if not np.all(np.isfinite(moved)):
        bad = int(np.flatnonzero(~np.isfinite(moved))[0])
        raise IntegrationFailureError(step=step_index + 1, particle=bad)
    return ParticleEnsemble(moved, t + dt, ens.base_seed)


def initial_ensemble(u0, N, base_seed):
    generator = rng.stream(base_seed, rng.PARTICLE_INITIAL)
    return ParticleEnsemble(u0.sample(generator, int(N)), 0.0, base_seed)


def simulate_mv(u0, model, T, dt, N, cfg, base_seed, snapshot_stride=1, workers=None):
    """Particle snapshots at every ``snapshot_stride``-th step, plus the initial and final ensembles."""
    if N < 1:
        raise PreconditionError('the particle system needs N >= 1')
    u0.grid.check_same(cfg.grid)
    ensemble = initial_ensemble(u0, N, base_seed)
    snapshots = [ensemble]
    if T == 0:
        return snapshots
    if dt <= 0:
        raise ConfigurationError('dt must be positive', key='particles.dt')
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ConfigurationError(f'T={T:g} is not a multiple of dt={dt:g}', key='particles.dt')
    stride = max(1, int(snapshot_stride))
    logger.info('simulating %d particles over %d steps', ensemble.size, n_steps)
    for k in range(n_steps):
        ensemble = step_mv(ensemble, model, dt, cfg, k, workers)
        # recompute the clock from the step count so snapshot times stay on the dt lattice
        ensemble = ParticleEnsemble(ensemble.positions, (k + 1) * dt, base_seed)
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            snapshots.append(ensemble)
    return snapshots


def snapshot_at(snapshots, t):
    for ensemble in snapshots:
        if abs(ensemble.time_stamp - t) <= 1e-9 * max(1.0, abs(t)):
            return ensemble
    raise PreconditionError(f'no particle snapshot at t={t!r}')
