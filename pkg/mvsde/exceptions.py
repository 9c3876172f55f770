"""
Errors raised by the numerical modules.

Every error carries the process exit status the command line reports for it:
2 for configuration problems, 1 for numerical failures.
"""


class MvsdeError(Exception):
    exit_code = 1
    default_detail = 'Numerical failure.'

    def __init__(self, detail=None):
        self.detail = detail or self.default_detail
        super().__init__(self.detail)


class ConfigurationError(MvsdeError):
    exit_code = 2
    default_detail = 'Invalid configuration.'

    def __init__(self, detail=None, key=None):
        self.key = key
        if key and detail:
            detail = f'{key}: {detail}'
        super().__init__(detail)


class PreconditionError(MvsdeError):
    default_detail = 'Precondition violated.'


class GridMismatchError(PreconditionError):
    default_detail = 'Densities live on different grids.'


class ModelEvaluationError(MvsdeError):
    default_detail = 'Coefficient evaluation returned a non-finite value.'


class SchemeFailureError(MvsdeError):
    default_detail = 'FPKE scheme failed.'

    def __init__(self, detail=None, step=None):
        self.step = step
        if step is not None:
            detail = f'{detail or self.default_detail} (step {step})'
        super().__init__(detail)


class StabilityError(SchemeFailureError):
    default_detail = 'Time step violates the stability rule.'


class IterationFailureError(SchemeFailureError):
    default_detail = 'Semi-implicit nonlinear solve did not converge.'


class IntegrationFailureError(MvsdeError):
    default_detail = 'SDE integration produced a non-finite state.'

    def __init__(self, detail=None, step=None, particle=None):
        self.step = step
        self.particle = particle
        where = []
        if step is not None:
            where.append(f'step {step}')
        if particle is not None:
            where.append(f'particle {particle}')
        if where:
            detail = f"{detail or self.default_detail} ({', '.join(where)})"
        super().__init__(detail)
