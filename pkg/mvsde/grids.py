"""
Uniform 1-D grids, cell-averaged densities and time-indexed FPKE solutions.

Off-grid evaluation of a density uses the Lebesgue-point convention of the
solver: piecewise-linear interpolation between cell centers inside the box
and zero outside it.
"""
from dataclasses import dataclass, field

import numpy as np

from .conf import numerics_settings
from .exceptions import ConfigurationError, GridMismatchError, PreconditionError


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_cells: int

    def __post_init__(self):
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)):
            raise ConfigurationError('domain bounds must be finite', key='domain')
        if self.x_min >= self.x_max:
            raise ConfigurationError('x_min must be smaller than x_max', key='domain.x_min')
        if int(self.n_cells) != self.n_cells or self.n_cells < 8:
            raise ConfigurationError('n_cells must be an integer >= 8', key='domain.n_cells')

    @property
    def dx(self):
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def length(self):
        return self.x_max - self.x_min

    @property
    def centers(self):
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def edges(self):
        return self.x_min + np.arange(self.n_cells + 1) * self.dx

    @property
    def faces(self):
        # interior faces only; the two boundary faces carry zero flux
        return self.edges[1:-1]

    def refine(self):
        return Grid1D(self.x_min, self.x_max, 2 * self.n_cells)

    def coarsen(self):
        if self.n_cells % 2:
            raise ConfigurationError('cannot coarsen an odd number of cells', key='domain.n_cells')
        return Grid1D(self.x_min, self.x_max, self.n_cells // 2)

    def cell_index(self, x):
        """Index of the cell containing ``x``, clipped into the box."""
        idx = np.floor((np.asarray(x, dtype=float) - self.x_min) / self.dx).astype(np.int64)
        return np.clip(idx, 0, self.n_cells - 1)

    def inside(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.x_min) & (x <= self.x_max)

    def check_same(self, other):
        if self != other:
            raise GridMismatchError(f'grid mismatch: {self} vs {other}')


@dataclass(frozen=True, eq=False)
class GridDensity:
    grid: Grid1D
    values: np.ndarray
    time_stamp: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise PreconditionError(
                f'expected {self.grid.n_cells} cell values, got shape {values.shape}'
            )
        if not np.all(np.isfinite(values)):
            raise PreconditionError('density contains non-finite values')
        if values.min() < -numerics_settings.NEGATIVITY_TOL:
            raise PreconditionError(f'density has negative cell value {values.min():.3e}')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def mass(self):
        return self.grid.dx * float(np.sum(self.values))

    @property
    def l1_norm(self):
        return self.grid.dx * float(np.sum(np.abs(self.values)))

    @property
    def linf_norm(self):
        return float(np.max(np.abs(self.values)))

    @property
    def boundary_mass(self):
        return self.grid.dx * float(self.values[0] + self.values[-1])

    def mean(self):
        return self.grid.dx * float(np.sum(self.grid.centers * self.values)) / self.mass

    def variance(self):
        m = self.mean()
        return self.grid.dx * float(np.sum((self.grid.centers - m) ** 2 * self.values)) / self.mass

    def with_time(self, time_stamp):
        return GridDensity(self.grid, self.values, time_stamp)

    def require_probability(self, tol=1e-10):
        if abs(self.mass - 1.0) > tol:
            raise PreconditionError(f'density mass {self.mass:.12f} differs from 1')
        return self

    def evaluate(self, x):
        """Piecewise-linear version between cell centers, zero outside the box."""
        x = np.asarray(x, dtype=float)
        inner = np.interp(x, self.grid.centers, self.values)
        return np.where(self.grid.inside(x), inner, 0.0)

    def cell_value(self, x):
        """Cell-average version: value of the containing cell, zero outside the box."""
        x = np.asarray(x, dtype=float)
        return np.where(self.grid.inside(x), self.values[self.grid.cell_index(x)], 0.0)

    def restrict(self):
        """Conservative restriction onto the grid with half as many cells."""
        coarse = self.grid.coarsen()
        return GridDensity(coarse, 0.5 * (self.values[0::2] + self.values[1::2]), self.time_stamp)

    def cdf(self):
        """Cumulative mass at the right edge of every cell."""
        return self.grid.dx * np.cumsum(self.values)

    def sample(self, generator, size):
        """Exact inverse-CDF sampling of the piecewise-constant density."""
        cell_mass = self.grid.dx * self.values
        cumulative = np.concatenate(([0.0], np.cumsum(cell_mass)))
        total = cumulative[-1]
        u = generator.random(size) * total
        idx = np.searchsorted(cumulative, u, side='right') - 1
        idx = np.clip(idx, 0, self.grid.n_cells - 1)
        # skip empty cells that searchsorted can land on at exact boundaries
        within = np.divide(
            u - cumulative[idx], cell_mass[idx],
            out=np.full_like(u, 0.5), where=cell_mass[idx] > 0,
        )
        return self.grid.x_min + (idx + np.clip(within, 0.0, 1.0)) * self.grid.dx


@dataclass(frozen=True, eq=False)
class FpkeSolution:
    grid: Grid1D
    dt: float
    values: np.ndarray
    model_id: str
    times: np.ndarray = field(default=None)
    model: object = field(default=None, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.grid.n_cells:
            raise PreconditionError('snapshot array must have shape (n_snapshots, n_cells)')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        times = self.dt * np.arange(values.shape[0])
        times.setflags(write=False)
        object.__setattr__(self, 'times', times)

    @property
    def n_snapshots(self):
        return self.values.shape[0]

    @property
    def horizon(self):
        return float(self.times[-1])

    def snapshot(self, k):
        return GridDensity(self.grid, self.values[k], float(self.times[k]))

    @property
    def initial(self):
        return self.snapshot(0)

    @property
    def final(self):
        return self.snapshot(self.n_snapshots - 1)

    def snapshots(self):
        return [self.snapshot(k) for k in range(self.n_snapshots)]

    def index_at(self, t):
        """Left-endpoint snapshot index for time ``t``."""
        if self.dt == 0:
            return 0
        k = int(np.floor(t / self.dt + 1e-9))
        return min(max(k, 0), self.n_snapshots - 1)

    def at(self, t):
        return self.snapshot(self.index_at(t))

    def has_snapshot(self, t):
        k = self.index_at(t)
        return abs(float(self.times[k]) - t) <= 1e-9 * max(1.0, abs(t))

    def exact(self, t):
        """Stored snapshot at exactly ``t``; PreconditionError when ``t`` falls between snapshots."""
        if not self.has_snapshot(t):
            raise PreconditionError(f't={t!r} is not a snapshot time (spacing {self.dt:g})')
        return self.snapshot(self.index_at(t))

    def masses(self):
        return self.grid.dx * self.values.sum(axis=1)

    def linf_trajectory(self):
        return self.values.max(axis=1)

    def boundary_masses(self):
        return self.grid.dx * (self.values[:, 0] + self.values[:, -1])
