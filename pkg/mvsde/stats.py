"""
Density comparison metrics and reference profiles.

All metrics compare densities on identical grids; use ``resample_linear`` to
move a density onto another grid first.
"""
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import ConfigurationError, PreconditionError
from .grids import GridDensity

logger = logging.getLogger(__name__)


class Metric(str, Enum):
    L1 = 'L1'
    LINF = 'Linf'
    W1 = 'W1'


@dataclass(frozen=True)
class MatchReport:
    metric: Metric
    value: float
    threshold: float
    passed: bool
    context: str = ''

    @classmethod
    def evaluate(cls, metric, value, threshold, context=''):
        value = float(value)
        threshold = float(threshold)
        return cls(Metric(metric), value, threshold, bool(value <= threshold), context)

    @property
    def verdict(self):
        return 'PASS' if self.passed else 'FAIL'


def l1_distance(p, q):
    p.grid.check_same(q.grid)
    return p.grid.dx * float(np.sum(np.abs(p.values - q.values)))


def linf_distance(p, q):
    p.grid.check_same(q.grid)
    return float(np.max(np.abs(p.values - q.values)))


def w1_distance(p, q, mass_tol=1e-8):
    """1-D Wasserstein distance through the cell-edge CDFs."""
    p.grid.check_same(q.grid)
    if abs(p.mass - q.mass) > mass_tol:
        raise PreconditionError(
            f'W1 needs equal masses, got {p.mass:.12f} and {q.mass:.12f}'
        )
    return p.grid.dx * float(np.sum(np.abs(p.cdf() - q.cdf())))


def resample_linear(density, grid):
    """Piecewise-linear resampling onto ``grid``, renormalized to the original mass."""
    values = density.evaluate(grid.centers)
    resampled = GridDensity(grid, values, density.time_stamp)
    if resampled.mass > 0:
        resampled = GridDensity(grid, values * (density.mass / resampled.mass), density.time_stamp)
    return resampled


class ProfileKind(str, Enum):
    GAUSSIAN = 'gaussian'
    BUMP = 'bump'
    UNIFORM = 'uniform'


def _gaussian(grid, mean=0.0, sd=1.0):
    if sd <= 0:
        raise ConfigurationError('sd must be positive', key='initial.sd')
    z = (grid.centers - mean) / sd
    return np.exp(-0.5 * z * z)


def _bump(grid, center=0.0, width=1.0):
    if width <= 0:
        raise ConfigurationError('width must be positive', key='initial.width')
    z = (grid.centers - center) / width
    # (1 - z^2)^3 is C^2 with compact support [center - width, center + width]
    return np.where(np.abs(z) < 1.0, (1.0 - z * z) ** 3, 0.0)


def _uniform(grid, a=-1.0, b=1.0):
    if a >= b:
        raise ConfigurationError('uniform profile needs a < b', key='initial.a')
    left = np.maximum(grid.edges[:-1], a)
    right = np.minimum(grid.edges[1:], b)
    return np.clip(right - left, 0.0, None) / grid.dx


PROFILES = {
    ProfileKind.GAUSSIAN: _gaussian,
    ProfileKind.BUMP: _bump,
    ProfileKind.UNIFORM: _uniform,
}


def reference_profile(kind, grid, **params):
    try:
        builder = PROFILES[ProfileKind(kind)]
    except ValueError:
        raise ConfigurationError(f'unsupported profile kind {kind!r}', key='initial.kind')
    raw = builder(grid, **params)
    mass = grid.dx * float(np.sum(raw))
    if mass <= 0:
        raise ConfigurationError(f'{kind} profile has no mass on the grid', key='initial.kind')
    return GridDensity(grid, raw / mass, 0.0)


def heat_kernel_solution(grid, mean, sd, t, diffusivity=1.0, drift=0.0):
    """Gaussian initial data transported by drift and spread by ``a`` (variance grows by 2at)."""
    return reference_profile(
        ProfileKind.GAUSSIAN, grid,
        mean=mean + drift * t,
        sd=float(np.sqrt(sd * sd + 2.0 * diffusivity * t)),
    ).with_time(t)


def histogram_density(samples, grid, time_stamp=0.0):
    """Normalized histogram of samples; samples outside the box are clipped into the boundary cells."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise PreconditionError('cannot build a histogram from zero samples')
    outside = int(np.count_nonzero(~grid.inside(samples)))
    if outside:
        logger.warning('%d of %d samples outside the box clipped into boundary cells', outside, samples.size)
    counts = np.bincount(grid.cell_index(samples), minlength=grid.n_cells)
    return GridDensity(grid, counts / (samples.size * grid.dx), time_stamp)


def counts_to_density(counts, grid, time_stamp=0.0):
    total = int(np.sum(counts))
    if total == 0:
        raise PreconditionError('cannot build a density from zero samples')
    return GridDensity(grid, np.asarray(counts, dtype=float) / (total * grid.dx), time_stamp)


def fitted_log2_slope(values):
    """Least-squares slope of log2(values) against their index; nan if any value is not positive."""
    values = np.asarray(values, dtype=float)
    if values.size < 2 or np.any(values <= 0) or not np.all(np.isfinite(values)):
        return float('nan')
    levels = np.arange(values.size)
    slope, _ = np.polyfit(levels, np.log2(values), 1)
    return float(slope)
