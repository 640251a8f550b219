"""First-order vector form w_{t+1} = K w_t + N_1(w_t).

The state vector is ordered w = (z, x_hat, y_hat), all in deviations from
the steady state.
"""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from core.exceptions import EvaluationError, UnsupportedModelError
from core.model import SteadyState, eval_residual, numeric_derivatives
from core.numerics import as_batch, central_jacobian, newton_solve

logger = logging.getLogger(__name__)

PHI_COND_LIMIT = 1e12
INNER_TOL = 1e-13
INNER_MAX_ITER = 50


@dataclass(frozen=True)
class FirstOrderSystem:
    K: np.ndarray
    nonlinear: Callable
    ss: SteadyState
    dims: tuple
    phi: np.ndarray
    gamma: np.ndarray

    @property
    def size(self):
        return sum(self.dims)

    def step(self, w):
        """One step of the nonlinear dynamics"""
        arr, single = as_batch(w, self.size)
        out = arr @ self.K.T + self.nonlinear(arr)
        return out[0] if single else out


def _assemble(model, jac):
    n_z, n_x, n_y = model.dims
    n = n_x + n_y
    phi = np.zeros((n_z + n, n_z + n))
    gamma = np.zeros_like(phi)
    phi[:n_z, :n_z] = np.eye(n_z)
    phi[n_z:, n_z:n_z + n_x] = jac.f3
    phi[n_z:, n_z + n_x:] = jac.f1
    gamma[:n_z, :n_z] = model.lam
    gamma[n_z:, :n_z] = -jac.f5
    gamma[n_z:, n_z:n_z + n_x] = -jac.f4
    gamma[n_z:, n_z + n_x:] = -jac.f2
    return phi, gamma


def _levels(model, ss, w):
    n_z, n_x, _ = model.dims
    z = w[:, :n_z]
    x = ss.x_bar + w[:, n_z:n_z + n_x]
    y = ss.y_bar + w[:, n_z + n_x:]
    return z, x, y


def build_first_order(model, ss, jacobians=None):
    """Build K = Phi^{-1} Gamma and the nonlinear remainder N_1"""
    jac = jacobians or numeric_derivatives(model, ss)
    phi, gamma = _assemble(model, jac)
    if not np.linalg.cond(phi) < PHI_COND_LIMIT:
        raise UnsupportedModelError(
            'Phi is singular; models with singular Phi need a generalized '
            '(QZ) eigenvalue decomposition, which is not supported'
        )
    K = np.linalg.solve(phi, gamma)
    n_z, n_x, n_y = model.dims
    size = n_z + n_x + n_y
    lin_rows = np.hstack([jac.f5, jac.f4, jac.f2])

    def remainder_form9(w):
        # f is linear in next-period variables, so evaluate them at zero
        z, x, y = _levels(model, ss, w)
        f = eval_residual(model, np.broadcast_to(ss.y_bar, y.shape), y,
                          np.broadcast_to(ss.x_bar, x.shape), x, z)
        n = f - w @ lin_rows.T
        rhs = np.hstack([np.zeros((len(w), n_z)), -n])
        return np.linalg.solve(phi, rhs.T).T

    def remainder_implicit(w):
        z, x, y = _levels(model, ss, w)
        guess = (w @ K.T)[:, n_z:]

        def f_next(nxt, rows):
            x_next = ss.x_bar + nxt[:, :n_x]
            y_next = ss.y_bar + nxt[:, n_x:]
            return eval_residual(model, y_next, y[rows], x_next, x[rows],
                                 z[rows])

        result = newton_solve(f_next, guess, INNER_TOL, INNER_MAX_ITER)
        if not result.converged.all():
            bad = int(np.flatnonzero(~result.converged)[0])
            raise EvaluationError(
                f'next-period solve failed at w={w[bad]} '
                f'(residual {result.residual_norm[bad]:.3e})',
                point=w[bad],
            )
        w_next = np.hstack([z @ model.lam.T, result.x])
        return w_next - w @ K.T

    remainder = remainder_form9 if model.form9 else remainder_implicit

    def nonlinear(w):
        arr, single = as_batch(w, size)
        out = remainder(arr)
        return out[0] if single else out

    logger.debug('first-order system for %s: K=%s', model.name, K.tolist())
    return FirstOrderSystem(
        K=K, nonlinear=nonlinear, ss=ss, dims=model.dims,
        phi=phi, gamma=gamma,
    )


def nonlinear_jacobian_at_origin(sys):
    """Jacobian of N_1 at w = 0 (Richardson-extrapolated differences)"""
    return central_jacobian(sys.nonlinear, np.zeros(sys.size),
                            richardson=True)
