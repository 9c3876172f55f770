"""
Numerical settings for the mvsde app.

Values come from the ``MVSDE`` dict in the Django settings module and fall
back to ``DEFAULTS``. Access them as attributes::

    from mvsde.conf import numerics_settings
    numerics_settings.CFL_SAFETY
"""
from django.conf import settings
from django.core.signals import setting_changed

DEFAULTS = {
    'TOL_MONOTONE': 1e-9,
    'TOL_LIPSCHITZ': 1e-9,
    'FD_STEP': 1e-5,
    'CFL_SAFETY': 0.4,
    'NEWTON_TOL': 1e-10,
    'NEWTON_MAX_ITER': 50,
    'NEGATIVITY_TOL': 1e-12,
    'BOUNDARY_MASS_ALARM': 1e-6,
    'MASS_TOL': 1e-10,
    'AUDIT_T_SAMPLES': 5,
    'AUDIT_X_SAMPLES': 65,
    'AUDIT_R_SAMPLES': 65,
    'AUDIT_PAIR_STRIDE': 1,
    'BOUND_GROWTH_FACTOR': 1.5,
    'WORKERS': 1,
}


class NumericsSettings:

    def __init__(self, defaults=None):
        self.defaults = defaults or DEFAULTS
        self._cached_attrs = set()
        self._user_settings = None

    @property
    def user_settings(self):
        if self._user_settings is None:
            self._user_settings = getattr(settings, 'MVSDE', {})
        return self._user_settings

    def __getattr__(self, attr):
        if attr not in self.defaults:
            raise AttributeError(f"Invalid mvsde setting: '{attr}'")
        value = self.user_settings.get(attr, self.defaults[attr])
        self._cached_attrs.add(attr)
        setattr(self, attr, value)
        return value

    def reload(self):
        for attr in self._cached_attrs:
            delattr(self, attr)
        self._cached_attrs.clear()
        self._user_settings = None


numerics_settings = NumericsSettings(DEFAULTS)


def reload_numerics_settings(*args, **kwargs):
    if kwargs['setting'] == 'MVSDE':
        numerics_settings.reload()


setting_changed.connect(reload_numerics_settings)
