"""Model interface, residual evaluation, steady state and derivatives.

A model is f(y_{t+1}, y_t, x_{t+1}, x_t, z_t) = 0 together with
z_{t+1} = Lambda z_t. The residual callable receives arrays whose last axis
has the declared sizes and may carry any leading batch axes; it returns
the n_y Euler-type equations followed by the n_x state transitions.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from core.exceptions import (
    ConfigError,
    ContractError,
    SingularJacobianError,
    SteadyStateError,
)
from core.numerics import central_jacobian, newton_solve

logger = logging.getLogger(__name__)

STEADY_TOL = 1e-12


@dataclass(frozen=True)
class Jacobians:
    """Derivative blocks of f at the steady state.

    f1..f5 are taken with respect to y_{t+1}, y_t, x_{t+1}, x_t and z_t.
    """
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    f4: np.ndarray
    f5: np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    n_x: int
    n_y: int
    n_z: int
    residual: Callable
    lam: np.ndarray
    steady_guess: np.ndarray
    jacobians: Optional[Callable] = None
    # N does not depend on next-period variables (f is linear in them)
    form9: bool = False
    name: str = 'model'
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.n_x, self.n_y, self.n_z) < 0 or self.n_y == 0:
            raise ConfigError(
                f'invalid dimensions n_x={self.n_x}, n_y={self.n_y}, '
                f'n_z={self.n_z}'
            )
        lam = np.asarray(self.lam, dtype=float).reshape(self.n_z, self.n_z)
        object.__setattr__(self, 'lam', lam)
        if self.n_z and np.max(np.abs(np.linalg.eigvals(lam))) >= 1.0:
            raise ConfigError('all eigenvalues of Lambda must lie inside '
                              'the unit circle')
        guess = np.asarray(self.steady_guess, dtype=float).ravel()
        if guess.size != self.n_eq:
            raise ConfigError(
                f'steady_guess has {guess.size} entries, '
                f'expected {self.n_eq}'
            )
        object.__setattr__(self, 'steady_guess', guess)

    @property
    def n_eq(self):
        return self.n_y + self.n_x

    @property
    def dims(self):
        return self.n_z, self.n_x, self.n_y


@dataclass(frozen=True)
class SteadyState:
    y_bar: np.ndarray
    x_bar: np.ndarray
    residual_norm: float


def _check(name, arr, size):
    if arr.shape[-1] != size:
        raise ContractError(
            f'{name} has trailing dimension {arr.shape[-1]}, expected {size}'
        )


def eval_residual(model, y_next, y, x_next, x, z):
    """Evaluate f at a point (or a batch of points)"""
    args = [np.asarray(a, dtype=float) for a in (y_next, y, x_next, x, z)]
    sizes = (model.n_y, model.n_y, model.n_x, model.n_x, model.n_z)
    names = ('y_next', 'y', 'x_next', 'x', 'z')
    for name, arr, size in zip(names, args, sizes):
        _check(name, arr, size)
    out = np.asarray(model.residual(*args), dtype=float)
    if out.shape[-1] != model.n_eq:
        raise ContractError(
            f'residual returned {out.shape[-1]} entries, '
            f'expected {model.n_eq}'
        )
    return out


def _stationary_residual(model):
    """g(y, x) = f(y, y, x, x, 0) on stacked (y, x) batches"""
    def g(s, rows=None):
        y = s[:, :model.n_y]
        x = s[:, model.n_y:]
        z = np.zeros((len(s), model.n_z))
        return eval_residual(model, y, y, x, x, z)
    return g


def find_steady_state(model, tol=STEADY_TOL, max_iter=50):
    """Newton iteration with step halving on f(y, y, x, x, 0) = 0"""
    if tol <= 0:
        raise ContractError('steady-state tolerance must be positive')
    g = _stationary_residual(model)
    result = newton_solve(g, model.steady_guess[None, :], tol, max_iter)
    norm = float(result.residual_norm[0])
    if result.singular[0]:
        raise SingularJacobianError(
            'singular Jacobian in steady-state Newton iteration',
            residual_norm=norm,
        )
    if not result.converged[0]:
        raise SteadyStateError(
            f'steady state not found in {max_iter} iterations '
            f'(last residual norm {norm:.3e})',
            residual_norm=norm,
        )
    s = result.x[0]
    logger.debug('steady state of %s after %d iterations: %s',
                 model.name, result.iterations, s)
    return SteadyState(
        y_bar=s[:model.n_y].copy(),
        x_bar=s[model.n_y:].copy(),
        residual_norm=norm,
    )


def numeric_derivatives(model, ss, use_analytic=True, step=None):
    """Return the five Jacobian blocks of f at the steady state.

    An analytic provider on the model takes precedence unless
    `use_analytic` is false; otherwise central differences are used.
    """
    if use_analytic and model.jacobians is not None:
        return model.jacobians(ss)
    n_y, n_x, n_z = model.n_y, model.n_x, model.n_z
    point = np.concatenate(
        [ss.y_bar, ss.y_bar, ss.x_bar, ss.x_bar, np.zeros(n_z)]
    )
    cuts = np.cumsum([n_y, n_y, n_x, n_x])

    def f(p):
        y_next, y, x_next, x, z = np.split(p, cuts, axis=1)
        return eval_residual(model, y_next, y, x_next, x, z)

    jac = central_jacobian(f, point, step=step)
    blocks = np.split(jac, cuts, axis=1)
    return Jacobians(*blocks)
