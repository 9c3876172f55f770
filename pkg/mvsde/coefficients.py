"""
Nemytskii coefficient pairs (b, a) and the numerical audit of (H1)-(H3).

A ``CoefficientModel`` evaluates b(t, x, r) and a(t, x, r) on numpy arrays
(broadcasting over t, x and the density value r) together with the partial
derivatives the audit and the solver need. Missing analytic derivatives fall
back to central differences.

The hypotheses quantify over all (t, x, r); here they are checked on a finite
``HypothesisGrid``. A passing report is a numerical audit, not a proof.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional

import numpy as np
from django.utils.module_loading import import_string
from scipy.integrate import trapezoid

from .conf import numerics_settings
from .exceptions import ConfigurationError, ModelEvaluationError

logger = logging.getLogger(__name__)


class CoefficientFamily(str, Enum):
    CONSTANT = 'constant'
    POROUS_REGULARIZED = 'porous-regularized'
    BURGERS_GAUSS = 'burgers-gauss'
    USER = 'user'


class DriftKind(str, Enum):
    NONE = 'none'
    CONSTANT = 'constant'
    BURGERS_GAUSS = 'burgers-gauss'


class EnvelopeKind(str, Enum):
    GAUSSIAN = 'gaussian'
    CONSTANT = 'constant'


class ConditionId(str, Enum):
    H1_MONOTONE = 'H1-monotone'
    H1_NONDEGENERATE = 'H1-nondegenerate'
    H2_BOUND = 'H2-bound'
    H3_LIPSCHITZ = 'H3-lipschitz'
    LAMBDA_FINITE = 'lambda-finite'
    H2_GROWTH = 'H2-growth'
    TIME_REGULARITY = 'time-regularity'
    H_ENVELOPE = 'h-envelope'
    D0_PROXY = 'D0-proxy'


def _zeros(t, x, r):
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(x), np.asarray(r)).shape)


def central_difference(fn, t, x, r, wrt, step):
    """First partial derivative of fn(t, x, r) with respect to 'r', 'x' or 't'."""
    args = {'t': np.asarray(t, dtype=float), 'x': np.asarray(x, dtype=float), 'r': np.asarray(r, dtype=float)}
    h = step * np.maximum(1.0, np.abs(args[wrt]))
    plus, minus = dict(args), dict(args)
    plus[wrt] = args[wrt] + h
    minus[wrt] = args[wrt] - h
    return (fn(**plus) - fn(**minus)) / (2.0 * h)


def second_central_difference(fn, t, x, r, wrt, step):
    args = {'t': np.asarray(t, dtype=float), 'x': np.asarray(x, dtype=float), 'r': np.asarray(r, dtype=float)}
    h = step * np.maximum(1.0, np.abs(args[wrt]))
    plus, minus = dict(args), dict(args)
    plus[wrt] = args[wrt] + h
    minus[wrt] = args[wrt] - h
    return (fn(**plus) - 2.0 * fn(**args) + fn(**minus)) / (h * h)


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    family: CoefficientFamily
    b: Callable
    a: Callable
    gamma0: float
    h_envelope: Callable
    params: Mapping[str, float] = field(default_factory=dict)
    drift: DriftKind = DriftKind.NONE
    db_dr: Optional[Callable] = None
    da_dr: Optional[Callable] = None
    db_dx: Optional[Callable] = None
    da_dx: Optional[Callable] = None
    d2a_dx2: Optional[Callable] = None
    label: str = ''

    def __post_init__(self):
        if not np.isfinite(self.gamma0) or self.gamma0 <= 0:
            raise ConfigurationError('gamma0 must be a positive real', key='coefficients.gamma0')

    @property
    def model_id(self):
        params = ','.join(f'{k}={self.params[k]!r}' for k in sorted(self.params))
        return f'{self.family.value}/{self.drift.value}/{self.label}[gamma0={self.gamma0!r};{params}]'

    def _evaluate(self, name, fn, t, x, r):
        value = np.asarray(fn(t, x, r), dtype=float)
        value = np.broadcast_to(value, np.broadcast(np.asarray(t), np.asarray(x), np.asarray(r)).shape)
        if not np.all(np.isfinite(value)):
            raise ModelEvaluationError(f'{name} is not finite for model {self.model_id}')
        return value

    def eval_a(self, t, x, r):
        return self._evaluate('a', self.a, t, x, r)

    def eval_b(self, t, x, r):
        return self._evaluate('b', self.b, t, x, r)

    def eval_h(self, x):
        value = np.asarray(self.h_envelope(np.asarray(x, dtype=float)), dtype=float)
        if not np.all(np.isfinite(value)) or np.any(value < 0):
            raise ModelEvaluationError('h envelope must be finite and nonnegative')
        return value

    def _derivative(self, name, analytic, fn, t, x, r, wrt, step=None):
        if analytic is not None:
            return self._evaluate(name, analytic, t, x, r)
        step = numerics_settings.FD_STEP if step is None else step
        return self._evaluate(
            name, lambda t, x, r: central_difference(fn, t, x, r, wrt, step), t, x, r
        )

    def eval_da_dr(self, t, x, r, step=None):
        return self._derivative('da/dr', self.da_dr, self.a, t, x, r, 'r', step)

    def eval_db_dr(self, t, x, r, step=None):
        return self._derivative('db/dr', self.db_dr, self.b, t, x, r, 'r', step)

    def eval_db_dx(self, t, x, r, step=None):
        return self._derivative('db/dx', self.db_dx, self.b, t, x, r, 'x', step)

    def eval_da_dx(self, t, x, r, step=None):
        return self._derivative('da/dx', self.da_dx, self.a, t, x, r, 'x', step)

    def eval_d2a_dx2(self, t, x, r, step=None):
        if self.d2a_dx2 is not None:
            return self._evaluate('d2a/dx2', self.d2a_dx2, t, x, r)
        # second differences lose two digits per halving of h; use sqrt of the first-order step
        step = np.sqrt(numerics_settings.FD_STEP) if step is None else step
        return self._evaluate(
            'd2a/dx2', lambda t, x, r: second_central_difference(self.a, t, x, r, 'x', step), t, x, r
        )

    def eval_dbeta_dr(self, t, x, r):
        return self.eval_a(t, x, r) + np.asarray(r) * self.eval_da_dr(t, x, r)


def eval_beta(model, t, x, r):
    return model.eval_a(t, x, r) * np.asarray(r, dtype=float)


def eval_bstar(model, t, x, r):
    return model.eval_b(t, x, r) * np.asarray(r, dtype=float)


def _envelope(kind, scale):
    scale = float(scale)
    if scale < 0:
        raise ConfigurationError('h scale must be nonnegative', key='h.scale')
    if EnvelopeKind(kind) == EnvelopeKind.GAUSSIAN:
        return lambda x: scale * np.exp(-np.asarray(x) ** 2)
    return lambda x: np.full(np.shape(x), scale)


def _drift_terms(kind, c):
    """(b, db_dr, db_dx) for the built-in drifts."""
    if kind == DriftKind.NONE:
        return _zeros, _zeros, _zeros
    if kind == DriftKind.CONSTANT:
        return (lambda t, x, r: c + _zeros(t, x, r)), _zeros, _zeros

    def b(t, x, r):
        return c * np.exp(-x * x) / (1.0 + r * r) + _zeros(t, x, r)

    def db_dr(t, x, r):
        return -2.0 * c * r * np.exp(-x * x) / (1.0 + r * r) ** 2 + _zeros(t, x, r)

    def db_dx(t, x, r):
        return -2.0 * x * c * np.exp(-x * x) / (1.0 + r * r) + _zeros(t, x, r)

    return b, db_dr, db_dx


def _porous_terms(gamma0, alpha, kappa, spatial_decay):
    """a = gamma0 + alpha (1 + kappa sin t) g(x) r^2 / (1 + r^2) and its derivatives."""
    if spatial_decay:
        g = lambda x: np.exp(-x * x)
        dg = lambda x: -2.0 * x * np.exp(-x * x)
        d2g = lambda x: (4.0 * x * x - 2.0) * np.exp(-x * x)
    else:
        g = lambda x: np.ones_like(x)
        dg = lambda x: np.zeros_like(x)
        d2g = lambda x: np.zeros_like(x)

    def amplitude(t):
        return alpha * (1.0 + kappa * np.sin(t))

    def a(t, x, r):
        return gamma0 + amplitude(t) * g(x) * r * r / (1.0 + r * r)

    def da_dr(t, x, r):
        return amplitude(t) * g(x) * 2.0 * r / (1.0 + r * r) ** 2

    def da_dx(t, x, r):
        return amplitude(t) * dg(x) * r * r / (1.0 + r * r)

    def d2a_dx2(t, x, r):
        return amplitude(t) * d2g(x) * r * r / (1.0 + r * r)

    return a, da_dr, da_dx, d2a_dx2


def constant_model(gamma0, alpha=None, c=0.0, h_kind=None, h_scale=None):
    alpha = gamma0 if alpha is None else alpha
    if alpha < gamma0:
        raise ConfigurationError('constant diffusion alpha must be >= gamma0', key='coefficients.alpha')
    b, db_dr, db_dx = _drift_terms(DriftKind.CONSTANT, c)
    return CoefficientModel(
        family=CoefficientFamily.CONSTANT,
        b=b, a=lambda t, x, r: alpha + _zeros(t, x, r),
        gamma0=gamma0,
        h_envelope=_envelope(h_kind or EnvelopeKind.CONSTANT, abs(c) if h_scale is None else h_scale),
        params={'alpha': alpha, 'c': c},
        drift=DriftKind.CONSTANT,
        db_dr=db_dr, db_dx=db_dx, da_dr=_zeros, da_dx=_zeros, d2a_dx2=_zeros,
    )


def porous_regularized_model(gamma0, alpha=1.0, kappa=0.0, spatial_decay=True,
                             drift=DriftKind.NONE, c=0.0, h_kind=None, h_scale=None):
    if abs(kappa) > 1.0:
        raise ConfigurationError('|kappa| must not exceed 1', key='coefficients.kappa')
    if alpha < 0:
        raise ConfigurationError('alpha must be nonnegative', key='coefficients.alpha')
    drift = DriftKind(drift)
    a, da_dr, da_dx, d2a_dx2 = _porous_terms(gamma0, alpha, kappa, spatial_decay)
    b, db_dr, db_dx = _drift_terms(drift, c)
    if h_kind is None:
        h_kind = EnvelopeKind.GAUSSIAN if spatial_decay else EnvelopeKind.CONSTANT
    if h_scale is None:
        h_scale = max(2.0 * abs(c), alpha * abs(kappa))
    return CoefficientModel(
        family=CoefficientFamily.POROUS_REGULARIZED,
        b=b, a=a, gamma0=gamma0,
        h_envelope=_envelope(h_kind, h_scale),
        params={'alpha': alpha, 'kappa': kappa, 'spatial_decay': float(bool(spatial_decay)), 'c': c},
        drift=drift,
        db_dr=db_dr, db_dx=db_dx, da_dr=da_dr, da_dx=da_dx, d2a_dx2=d2a_dx2,
    )


def burgers_gauss_model(gamma0, alpha=None, c=1.0, h_kind=None, h_scale=None):
    alpha = gamma0 if alpha is None else alpha
    if alpha < gamma0:
        raise ConfigurationError('constant diffusion alpha must be >= gamma0', key='coefficients.alpha')
    b, db_dr, db_dx = _drift_terms(DriftKind.BURGERS_GAUSS, c)
    return CoefficientModel(
        family=CoefficientFamily.BURGERS_GAUSS,
        b=b, a=lambda t, x, r: alpha + _zeros(t, x, r),
        gamma0=gamma0,
        h_envelope=_envelope(h_kind or EnvelopeKind.GAUSSIAN, 2.0 * abs(c) if h_scale is None else h_scale),
        params={'alpha': alpha, 'c': c},
        drift=DriftKind.BURGERS_GAUSS,
        db_dr=db_dr, db_dx=db_dx, da_dr=_zeros, da_dx=_zeros, d2a_dx2=_zeros,
    )


def reciprocal_diffusion_model(gamma0, params, h_kind=None, h_scale=None):
    """a(r) = alpha / (1 + r^2): bounded and positive but beta is decreasing for |r| > 1."""
    alpha = float(params.get('alpha', 1.0))
    return CoefficientModel(
        family=CoefficientFamily.USER,
        b=_zeros,
        a=lambda t, x, r: alpha / (1.0 + r * r) + _zeros(t, x, r),
        gamma0=gamma0,
        h_envelope=_envelope(h_kind or EnvelopeKind.CONSTANT, h_scale or 0.0),
        params={'alpha': alpha},
        da_dr=lambda t, x, r: -2.0 * alpha * r / (1.0 + r * r) ** 2 + _zeros(t, x, r),
        db_dr=_zeros, db_dx=_zeros, da_dx=_zeros, d2a_dx2=_zeros,
        label='reciprocal',
    )


def linear_drift_model(gamma0, params, h_kind=None, h_scale=None):
    """b(r) = c r with constant diffusion: b* grows quadratically and breaks the Lipschitz bound."""
    c = float(params.get('c', 1.0))
    alpha = float(params.get('alpha', gamma0))
    return CoefficientModel(
        family=CoefficientFamily.USER,
        b=lambda t, x, r: c * r + _zeros(t, x, r),
        a=lambda t, x, r: alpha + _zeros(t, x, r),
        gamma0=gamma0,
        h_envelope=_envelope(h_kind or EnvelopeKind.GAUSSIAN, 1.0 if h_scale is None else h_scale),
        params={'alpha': alpha, 'c': c},
        db_dr=lambda t, x, r: c + _zeros(t, x, r),
        db_dx=_zeros, da_dr=_zeros, da_dx=_zeros, d2a_dx2=_zeros,
        label='linear-drift',
    )


def build_model(family, gamma0, params=None, drift=None, h_kind=None, h_scale=None, factory=None):
    """Build a coefficient model from run-configuration values."""
    params = dict(params or {})
    family = CoefficientFamily(family)
    if family == CoefficientFamily.CONSTANT:
        return constant_model(
            gamma0, alpha=params.get('alpha'), c=params.get('c', 0.0),
            h_kind=h_kind, h_scale=h_scale,
        )
    if family == CoefficientFamily.POROUS_REGULARIZED:
        return porous_regularized_model(
            gamma0, alpha=params.get('alpha', 1.0), kappa=params.get('kappa', 0.0),
            spatial_decay=bool(params.get('spatial_decay', True)),
            drift=drift or DriftKind.NONE, c=params.get('c', 0.0),
            h_kind=h_kind, h_scale=h_scale,
        )
    if family == CoefficientFamily.BURGERS_GAUSS:
        return burgers_gauss_model(
            gamma0, alpha=params.get('alpha'), c=params.get('c', 1.0),
            h_kind=h_kind, h_scale=h_scale,
        )
    if not factory:
        raise ConfigurationError('user family needs a factory path', key='coefficients.factory')
    try:
        builder = import_string(factory)
    except ImportError as exc:
        raise ConfigurationError(str(exc), key='coefficients.factory')
    model = builder(gamma0, params, h_kind=h_kind, h_scale=h_scale)
    if not isinstance(model, CoefficientModel):
        raise ConfigurationError('factory did not return a CoefficientModel', key='coefficients.factory')
    return model


# ---------------------------------------------------------------------------
# Hypothesis audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HypothesisGrid:
    t_samples: np.ndarray
    x_samples: np.ndarray
    r_samples: np.ndarray
    pair_stride: int = 1

    def __post_init__(self):
        for name in ('t_samples', 'x_samples', 'r_samples'):
            values = np.array(getattr(self, name), dtype=float)
            if values.ndim != 1 or values.size == 0:
                raise ConfigurationError(f'{name} must be a non-empty sequence', key=f'audit.{name}')
            if np.any(np.diff(values) <= 0):
                raise ConfigurationError(f'{name} must be strictly increasing', key=f'audit.{name}')
            values.setflags(write=False)
            object.__setattr__(self, name, values)
        r = self.r_samples
        if not (np.any(r == 0.0) and np.any(r < 0) and np.any(r > 0)):
            raise ConfigurationError(
                'r_samples must contain 0 and both negative and positive values', key='audit.r_samples'
            )
        if int(self.pair_stride) < 1:
            raise ConfigurationError('pair_stride must be a positive integer', key='audit.pair_stride')

    def mesh(self, r_samples=None):
        r = self.r_samples if r_samples is None else r_samples
        return np.meshgrid(self.t_samples, self.x_samples, r, indexing='ij')

    def pairs(self):
        n = self.r_samples.size
        i, j = np.triu_indices(n, k=1)
        keep = (j - i) % int(self.pair_stride) == 0
        return i[keep], j[keep]


def symmetric_r_samples(r_max, n):
    r = np.linspace(-r_max, r_max, n)
    r[np.argmin(np.abs(r))] = 0.0
    return r


def default_hypothesis_grid(T, grid, r_max, n_t=None, n_x=None, n_r=None, pair_stride=None):
    n_t = n_t or numerics_settings.AUDIT_T_SAMPLES
    n_x = n_x or numerics_settings.AUDIT_X_SAMPLES
    n_r = n_r or numerics_settings.AUDIT_R_SAMPLES
    t = np.linspace(0.0, T, n_t) if T > 0 else np.array([0.0])
    return HypothesisGrid(
        t_samples=t,
        x_samples=np.linspace(grid.x_min, grid.x_max, n_x),
        r_samples=symmetric_r_samples(r_max, n_r),
        pair_stride=pair_stride or numerics_settings.AUDIT_PAIR_STRIDE,
    )


def audit_r_range(model, grid, T, u0_sup):
    """r-range 2 (Lambda T + ||u0||_inf) that covers the proved L-infinity range of the solution."""
    u0_sup = max(float(u0_sup), 1.0)
    audit_grid = default_hypothesis_grid(T, grid, 2.0 * u0_sup)
    lam = estimate_lambda(model, audit_grid).estimated_constant
    return 2.0 * (lam * T + u0_sup)


@dataclass(frozen=True)
class ConditionReport:
    condition_id: ConditionId
    passed: bool
    estimated_constant: float
    witness: Optional[tuple] = None
    detail: str = ''

    @property
    def verdict(self):
        return 'PASS' if self.passed else 'FAIL'


def _witness(index, t, x, r, r_bar=None):
    r_bar = r if r_bar is None else r_bar
    return (float(t[index]), float(x[index]), float(r[index]), float(r_bar[index]))


def check_nondegeneracy(model, grid):
    T, X, R = grid.mesh()
    a = model.eval_a(T, X, R)
    index = np.unravel_index(np.argmin(a), a.shape)
    a_min = float(a[index])
    passed = a_min >= model.gamma0 - numerics_settings.TOL_MONOTONE
    return ConditionReport(
        ConditionId.H1_NONDEGENERATE, passed, a_min, _witness(index, T, X, R),
        f'min a = {a_min:.6g}, declared gamma0 = {model.gamma0:.6g}',
    )


def check_monotonicity(model, grid):
    i, j = grid.pairs()
    if i.size == 0:
        raise ConfigurationError('no (r, r_bar) pairs to test', key='audit.pair_stride')
    T, X, R = grid.mesh()
    beta = eval_beta(model, T, X, R)
    d_beta = beta[..., j] - beta[..., i]
    d_r = grid.r_samples[j] - grid.r_samples[i]
    quotient = d_beta / d_r
    margin = d_beta * d_r - model.gamma0 * d_r * d_r
    index = np.unravel_index(np.argmin(margin), margin.shape)
    passed = float(margin[index]) >= -numerics_settings.TOL_MONOTONE
    tk, xk, pk = index
    witness = (
        float(grid.t_samples[tk]), float(grid.x_samples[xk]),
        float(grid.r_samples[i[pk]]), float(grid.r_samples[j[pk]]),
    )
    estimated = float(np.min(quotient))
    return ConditionReport(
        ConditionId.H1_MONOTONE, passed, estimated, witness,
        f'inf difference quotient {estimated:.6g} against gamma0 {model.gamma0:.6g}',
    )


def check_lipschitz_bstar(model, grid):
    i, j = grid.pairs()
    if i.size == 0:
        raise ConfigurationError('no (r, r_bar) pairs to test', key='audit.pair_stride')
    T, X, R = grid.mesh()
    bstar = eval_bstar(model, T, X, R)
    h = model.eval_h(grid.x_samples)[None, :, None]
    d_bstar = np.abs(bstar[..., j] - bstar[..., i])
    bound = h * np.abs(grid.r_samples[j] - grid.r_samples[i])
    excess = d_bstar - bound
    ratio = np.divide(d_bstar, bound, out=np.zeros_like(d_bstar), where=bound > 0)
    index = np.unravel_index(np.argmax(excess), excess.shape)
    passed = float(excess[index]) <= numerics_settings.TOL_LIPSCHITZ
    tk, xk, pk = index
    witness = (
        float(grid.t_samples[tk]), float(grid.x_samples[xk]),
        float(grid.r_samples[i[pk]]), float(grid.r_samples[j[pk]]),
    )
    estimated = float(np.max(ratio)) if ratio.size else 0.0
    return ConditionReport(
        ConditionId.H3_LIPSCHITZ, passed, estimated, witness,
        f'max |db*| / (h |dr|) = {estimated:.6g}',
    )


def estimate_lambda(model, grid):
    T, X, R = grid.mesh()
    term = np.abs(model.eval_db_dx(T, X, R) * R) + np.abs(model.eval_d2a_dx2(T, X, R) * R)
    index = np.unravel_index(np.argmax(term), term.shape)
    lam = float(term[index])
    return ConditionReport(
        ConditionId.LAMBDA_FINITE, bool(np.isfinite(lam)), lam, _witness(index, T, X, R),
        f'Lambda(b, beta) estimate {lam:.6g}',
    )


def _bound_sup(model, grid, r_samples):
    T, X, R = grid.mesh(r_samples)
    parts = (
        np.abs(model.eval_a(T, X, R)),
        np.abs(model.eval_da_dr(T, X, R)),
        np.abs(model.eval_b(T, X, R)),
        np.abs(R * model.eval_db_dr(T, X, R)),
    )
    return [float(np.max(p)) for p in parts], (T, X, R, parts)


def check_bounds(model, grid):
    """a, da/dr, b and r db/dr bounded: sups must stop growing when the r-range is doubled."""
    base_r = grid.r_samples * max(1.0, 2.0 / max(np.max(np.abs(grid.r_samples)), 1e-300))
    base, _ = _bound_sup(model, grid, base_r)
    doubled, (T, X, R, parts) = _bound_sup(model, grid, 2.0 * base_r)
    factor = numerics_settings.BOUND_GROWTH_FACTOR
    growth = [d / s if s > 0 else (1.0 if d == 0 else np.inf) for s, d in zip(base, doubled)]
    worst = int(np.argmax(growth))
    passed = all(np.isfinite(doubled)) and growth[worst] <= factor
    index = np.unravel_index(np.argmax(parts[worst]), parts[worst].shape)
    names = ('a', 'da/dr', 'b', 'r db/dr')
    return ConditionReport(
        ConditionId.H2_BOUND, bool(passed), float(max(doubled)), _witness(index, T, X, R),
        f'worst growth {names[worst]} x{growth[worst]:.3g} when the r-range doubles',
    )


def check_growth_bstar(model, grid):
    T, X, R = grid.mesh()
    bstar = np.abs(eval_bstar(model, T, X, R))
    bound = model.eval_h(grid.x_samples)[None, :, None] * np.abs(R)
    excess = bstar - bound
    ratio = np.divide(bstar, bound, out=np.zeros_like(bstar), where=bound > 0)
    index = np.unravel_index(np.argmax(excess), excess.shape)
    passed = float(excess[index]) <= numerics_settings.TOL_LIPSCHITZ
    return ConditionReport(
        ConditionId.H2_GROWTH, passed, float(np.max(ratio)), _witness(index, T, X, R),
        '|b*| <= h |r|',
    )


def check_time_regularity(model, grid):
    t = grid.t_samples
    if t.size < 2:
        return ConditionReport(ConditionId.TIME_REGULARITY, True, 0.0, None, 'single time sample')
    T, X, R = grid.mesh()
    h = model.eval_h(grid.x_samples)[None, :, None]
    dt = np.diff(t)[:, None, None]
    beta = eval_beta(model, T, X, R)
    bstar = eval_bstar(model, T, X, R)
    d_beta = np.abs(np.diff(beta, axis=0))
    d_bstar = np.abs(np.diff(bstar, axis=0))
    bound_beta = h * dt * (1.0 + np.abs(R[:-1]))
    bound_bstar = h * dt * (1.0 + np.abs(bstar[:-1]))
    excess = np.maximum(d_beta - bound_beta, d_bstar - bound_bstar)
    ratio = np.maximum(
        np.divide(d_beta, bound_beta, out=np.zeros_like(d_beta), where=bound_beta > 0),
        np.divide(d_bstar, bound_bstar, out=np.zeros_like(d_bstar), where=bound_bstar > 0),
    )
    index = np.unravel_index(np.argmax(excess), excess.shape)
    passed = float(excess[index]) <= numerics_settings.TOL_LIPSCHITZ
    return ConditionReport(
        ConditionId.TIME_REGULARITY, passed, float(np.max(ratio)), _witness(index, T[:-1], X[:-1], R[:-1]),
        'adjacent time samples; never gates the solver',
    )


def check_h_envelope(model, grid):
    x = np.linspace(grid.x_samples[0], grid.x_samples[-1], 4 * grid.x_samples.size + 1)
    h = model.eval_h(x)
    l2 = float(np.sqrt(trapezoid(h * h, x)))
    sup = float(np.max(h))
    passed = np.isfinite(l2) and np.isfinite(sup)
    return ConditionReport(
        ConditionId.H_ENVELOPE, bool(passed), l2, None,
        f'sup h = {sup:.6g}, box L2 norm = {l2:.6g} (box quadrature only)',
    )


CORE_CHECKS = (
    check_monotonicity,
    check_nondegeneracy,
    check_bounds,
    check_lipschitz_bstar,
    estimate_lambda,
)

SUPPLEMENTARY_CHECKS = (
    check_growth_bstar,
    check_time_regularity,
    check_h_envelope,
)


def audit_all(model, grid, supplementary=True):
    checks = CORE_CHECKS + (SUPPLEMENTARY_CHECKS if supplementary else ())
    reports = [check(model, grid) for check in checks]
    for report in reports:
        logger.debug('condition %s %s constant=%.6g', report.condition_id.value, report.verdict,
                     report.estimated_constant)
    return reports
