"""Errors raised by the solver library.

Each error carries the process exit code the `asm` management command
reports for it.
"""


class AsmError(Exception):
    """Base class for solver errors"""
    exit_code = 1


class ConfigError(AsmError, ValueError):
    """Invalid run configuration or model parameters"""
    exit_code = 1


class ContractError(AsmError, ValueError):
    """A caller broke a precondition (dimensions, domains)"""
    exit_code = 1


class SteadyStateError(AsmError):
    """Newton iteration for the steady state did not converge"""
    exit_code = 2

    def __init__(self, message, residual_norm=None):
        super().__init__(message)
        self.residual_norm = residual_norm


class SingularJacobianError(SteadyStateError):
    """Newton Jacobian is singular"""


class SpectralError(AsmError):
    """Base class for linearization and spectral failures"""
    exit_code = 3


class UnitRootError(SpectralError):
    """An eigenvalue of K lies on or near the unit circle"""

    def __init__(self, eigenvalues, eps_unit):
        moduli = ', '.join(f'{abs(lam):.12g}' for lam in eigenvalues)
        super().__init__(
            f'eigenvalue modulus within {eps_unit:g} of one: {moduli}'
        )
        self.eigenvalues = eigenvalues


class BlanchardKahnError(SpectralError):
    """Stable eigenvalue count differs from the number of states"""

    def __init__(self, found, required):
        super().__init__(
            f'Blanchard-Kahn condition fails: {found} stable eigenvalues '
            f'found, {required} required'
        )
        self.found = found
        self.required = required


class UnsupportedModelError(SpectralError):
    """The model needs a pipeline this library does not provide"""


class ConstructionError(SpectralError):
    """The transformed system fails its origin checks"""


class NonContractionError(AsmError):
    """A fixed-point iteration exceeded its iteration cap"""
    exit_code = 4

    def __init__(self, message, order=None, residual=None):
        super().__init__(message)
        self.order = order
        self.residual = residual


class ConditionError(NonContractionError):
    """No candidate domain satisfies Conditions 1-3"""


class EvaluationError(AsmError):
    """An inner solve inside a map evaluation failed"""
    exit_code = 4

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DivergenceError(AsmError):
    """A forward iteration overflowed"""
    exit_code = 4

    def __init__(self, step, exit_step=None):
        super().__init__(f'forward iteration diverged at step {step}')
        self.step = step
        self.exit_step = exit_step


class InfeasibleInitialConditionError(AsmError):
    """No transformed initial condition matches (x0, z0)"""
    exit_code = 5
