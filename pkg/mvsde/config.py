"""
Run configuration: the flat ``key = value`` file format and the typed
RunConfig built from it.

    # heat benchmark
    coefficients.family = constant
    coefficients.gamma0 = 1.0
    domain.n_cells = 1024
    T = 0.5

Dotted keys become nested sections; validation is done by
``mvsde.serializers.RunConfigSerializer`` and every problem is reported as a
ConfigurationError naming the offending dotted key.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

from rest_framework import serializers

from .coefficients import build_model, default_hypothesis_grid
from .exceptions import ConfigurationError
from .fpke import SchemeMode, SchemeOptions
from .grids import Grid1D
from .particles import EstimatorConfig
from .sde import Integrator
from .serializers import RunConfigSerializer
from .stats import reference_profile

logger = logging.getLogger(__name__)


def parse_config_text(text):
    """Nested dict of raw string values from ``key = value`` lines; ``#`` starts a comment."""
    data = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError(f'line {lineno}: expected "key = value"', key='config')
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigurationError(f'line {lineno}: empty key', key='config')
        *sections, leaf = key.split('.')
        node = data
        for section in sections:
            node = node.setdefault(section, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f'line {lineno}: {section} is both a value and a section', key=key)
        if isinstance(node.get(leaf), dict):
            raise ConfigurationError(f'line {lineno}: {leaf} is both a value and a section', key=key)
        if leaf in node:
            raise ConfigurationError(f'line {lineno}: duplicate key', key=key)
        node[leaf] = value
    return data


def flatten_errors(detail, prefix=''):
    """Turn DRF's nested error detail into ``(dotted.key, message)`` pairs."""
    if isinstance(detail, dict):
        pairs = []
        for key, value in detail.items():
            name = prefix if key == 'non_field_errors' else (f'{prefix}.{key}' if prefix else str(key))
            pairs.extend(flatten_errors(value, name))
        return pairs
    if isinstance(detail, (list, tuple)):
        pairs = []
        for item in detail:
            pairs.extend(flatten_errors(item, prefix))
        return pairs
    return [(prefix or 'config', str(detail))]


@dataclass(frozen=True)
class SdeOptions:
    enabled: bool = False
    n_paths: int = 50000
    dt: Optional[float] = None
    integrators: List[Integrator] = field(default_factory=lambda: [Integrator.EULER])
    gap_levels: int = 0
    initial_seed: Optional[int] = None
    noise_seed: Optional[int] = None
    base_seed: Optional[int] = None
    times: List[float] = field(default_factory=list)
    trajectory_paths: int = 4
    workers: Optional[int] = None


@dataclass(frozen=True)
class ParticleOptions:
    enabled: bool = False
    n: int = 50000
    dt: Optional[float] = None
    estimator: str = 'histogram'
    bandwidth_rule: str = 'scott'
    bandwidth: Optional[float] = None
    seed: Optional[int] = None
    times: List[float] = field(default_factory=list)
    snapshot_stride: int = 1
    output_particles: bool = False
    workers: Optional[int] = None


@dataclass(frozen=True)
class CheckOptions:
    conditions: bool = True
    supplementary: bool = True
    conservation: bool = True
    contraction: bool = True
    linf: bool = True
    weak_residual: bool = False
    contraction_tolerance: Optional[float] = None
    linf_tolerance: Optional[float] = None
    weak_residual_tolerance: float = 1e-2
    oracle_threshold: float = 2e-3
    w1_threshold: float = 0.02
    particle_threshold: float = 0.05
    gap_slope: float = 0.4


@dataclass(frozen=True)
class RunConfig:
    coefficients: dict
    h: dict
    domain: dict
    T: float
    dt: float
    initial: dict
    initial_bar: Optional[dict]
    fpke: dict
    sde: SdeOptions
    particles: ParticleOptions
    checks: CheckOptions
    audit: dict
    output_dir: Path

    @classmethod
    def from_validated(cls, data):
        sde = dict(data['sde'])
        sde['integrators'] = [Integrator(name) for name in sde['integrators']]
        return cls(
            coefficients=data['coefficients'],
            h=data['h'],
            domain=data['domain'],
            T=data['T'],
            dt=data['dt'],
            initial=data['initial'],
            initial_bar=data.get('initial_bar'),
            fpke=data['fpke'],
            sde=SdeOptions(**sde),
            particles=ParticleOptions(**data['particles']),
            checks=CheckOptions(**data['checks']),
            audit=data['audit'],
            output_dir=Path(data['output']['dir']),
        )

    def with_output_dir(self, path):
        return replace(self, output_dir=Path(path))

    def grid(self):
        return Grid1D(self.domain['x_min'], self.domain['x_max'], self.domain['n_cells'])

    def build_model(self):
        section = self.coefficients
        params = {
            key: section[key]
            for key in ('alpha', 'kappa', 'c')
            if section.get(key) is not None
        }
        params['spatial_decay'] = section['spatial_decay']
        return build_model(
            section['family'], section['gamma0'], params=params,
            drift=section.get('drift'),
            h_kind=self.h.get('kind'), h_scale=self.h.get('scale'),
            factory=section.get('factory'),
        )

    def initial_density(self, grid=None):
        return reference_profile(self.initial['kind'], grid or self.grid(), **self.initial['params'])

    def initial_bar_density(self, grid=None):
        if not self.initial_bar:
            return None
        return reference_profile(self.initial_bar['kind'], grid or self.grid(), **self.initial_bar['params'])

    def scheme_options(self, **overrides):
        options = {'mode': SchemeMode(self.fpke['mode']), 'store_every': self.fpke['output_stride']}
        options.update(overrides)
        return SchemeOptions(**options)

    def hypothesis_grid(self, r_max):
        return default_hypothesis_grid(
            self.T, self.grid(), self.audit.get('r_max') or r_max,
            n_t=self.audit.get('t_samples'), n_x=self.audit.get('x_samples'),
            n_r=self.audit.get('r_samples'), pair_stride=self.audit.get('pair_stride'),
        )

    def estimator_config(self, grid=None):
        return EstimatorConfig(
            grid=grid or self.grid(),
            kind=self.particles.estimator,
            bandwidth=self.particles.bandwidth,
            bandwidth_rule=self.particles.bandwidth_rule,
        )

    @property
    def sde_dt(self):
        return self.sde.dt or self.dt

    @property
    def particles_dt(self):
        return self.particles.dt or self.dt


def apply_seed_override(data, seed):
    """Replace every stage seed with one derived from ``seed``."""
    data = dict(data)
    sde = dict(data.get('sde', {}))
    sde.update({'initial_seed': seed, 'noise_seed': seed + 1, 'base_seed': seed + 2})
    particles = dict(data.get('particles', {}))
    particles['seed'] = seed + 3
    data['sde'] = sde
    data['particles'] = particles
    return data


def load_run_config(data, seed_override=None):
    """Validate a raw nested dict into a RunConfig, raising ConfigurationError on the first bad key."""
    if seed_override is not None:
        if seed_override < 0:
            raise ConfigurationError('seeds must be nonnegative', key='seed-override')
        data = apply_seed_override(data, int(seed_override))
    serializer = RunConfigSerializer(data=data)
    try:
        serializer.is_valid(raise_exception=True)
    except serializers.ValidationError as exc:
        problems = flatten_errors(exc.detail)
        for key, message in problems[1:]:
            logger.debug('config problem %s: %s', key, message)
        key, message = problems[0]
        raise ConfigurationError(message, key=key)
    return serializer.save()


def read_run_config(path, seed_override=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f'cannot read {path}: {exc.strerror}', key='config')
    return load_run_config(parse_config_text(text), seed_override=seed_override)
