"""Initial conditions, closed-loop simulation and the extended-path solver."""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.exceptions import (
    ContractError,
    InfeasibleInitialConditionError,
    NonContractionError,
)
from core.model import eval_residual
from core.numerics import newton_solve

logger = logging.getLogger(__name__)

INIT_TOL = 1e-12
INIT_MAX_ITER = 50
EP_TOL = 1e-12
EP_MAX_ITER = 200


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    z_path: np.ndarray
    x_path: np.ndarray
    y_path: np.ndarray
    u_path: np.ndarray
    v_path: np.ndarray
    truncated_at: Optional[int] = None

    @property
    def length(self):
        return len(self.times)

    def deviations(self, ss):
        """Stacked (z, x_hat, y_hat) for every period"""
        return np.hstack([self.z_path, self.x_path - ss.x_bar,
                          self.y_path - ss.y_bar])


@dataclass(frozen=True)
class EPConfig:
    horizon: int
    type2_iters: int
    tol: float = EP_TOL
    max_iter: int = EP_MAX_ITER

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractError('EP horizon must be at least 1')
        if self.type2_iters < 1:
            raise ContractError('EP needs at least one Type II iteration')
        if not self.tol > 0:
            raise ContractError('EP tolerance must be positive')


@dataclass(frozen=True)
class EPResult:
    """All Type II iterates; V[j - 1, i] holds V^j_{n,t+i}"""
    V: np.ndarray
    u_path: np.ndarray
    config: EPConfig

    def target_order(self, j, i):
        """Order of the ASM policy that V^j_{n,t+i} reproduces"""
        return min(j, self.config.horizon + 1 - i)


def _levels(system, u, v):
    ss = system.first_order.ss
    n_z, n_x, _ = system.first_order.dims
    w = system.to_original(u, v)
    z = w[:, :n_z]
    x = ss.x_bar + w[:, n_z:n_z + n_x]
    y = ss.y_bar + w[:, n_z + n_x:]
    return z, x, y


def _policy_values(p, u):
    return np.atleast_2d(p.evaluate(np.atleast_2d(u), strict=False))


def solve_initial(p, split, x0, z0, tol=INIT_TOL, max_iter=INIT_MAX_ITER):
    """u_0 with Z11 u_0 + Z12 h_i(u_0) = (z_0, x_0 - x_bar)"""
    system = p.system
    ss = system.first_order.ss
    n_u = system.n_u
    target = np.concatenate([np.atleast_1d(np.asarray(z0, dtype=float)),
                             np.asarray(x0, dtype=float) - ss.x_bar])
    if target.size != n_u:
        raise ContractError(
            f'initial condition has {target.size} entries, expected {n_u}'
        )
    Z11 = split.Z[:n_u, :n_u]
    Z12 = split.Z[:n_u, n_u:]
    guess = np.linalg.solve(Z11, target)

    def residual(u, rows):
        return u @ Z11.T + _policy_values(p, u) @ Z12.T - target

    result = newton_solve(residual, guess[None, :], tol, max_iter)
    if not result.converged[0]:
        raise InfeasibleInitialConditionError(
            f'no u_0 found for x0={x0}, z0={z0} '
            f'(last residual {result.residual_norm[0]:.3e})'
        )
    return result.x[0]


def _trajectory(system, u_path, v_path, truncated_at=None):
    z, x, y = _levels(system, u_path, v_path)
    return Trajectory(
        times=np.arange(len(u_path)),
        z_path=z, x_path=x, y_path=y,
        u_path=u_path, v_path=v_path,
        truncated_at=truncated_at,
    )


def simulate(p, split, u0, T, r_u=None):
    """Iterate u_{t+1} = A u_t + F(u_t, h_i(u_t)) for T steps.

    With `r_u` the path stops at the first period that leaves U_{r_u};
    that period is recorded in `truncated_at`.
    """
    if T < 0:
        raise ContractError('T must be nonnegative')
    system = p.system
    u = np.asarray(u0, dtype=float).reshape(1, system.n_u)
    if r_u is not None and np.linalg.norm(u) > r_u:
        raise ContractError(f'|u0| = {np.linalg.norm(u):.4g} exceeds r_u')
    us, vs = [], []
    truncated_at = None
    for t in range(T + 1):
        if r_u is not None and np.linalg.norm(u) > r_u:
            truncated_at = t
            logger.warning('trajectory left U_r at t=%d, truncated', t)
            break
        v = p.evaluate(u)
        us.append(u[0])
        vs.append(v[0])
        F, _ = system.fg(u, v)
        u = u @ split.A.T + F
    return _trajectory(system, np.array(us), np.array(vs), truncated_at)


def simulate_stochastic(p, split, x0, z0, shocks, T):
    """Certainty-equivalent path: solve, step on the manifold, shock.

    Each period steps u_{t+1} = A u_t + F(u_t, h_i(u_t)) and maps
    (u_{t+1}, h_i(u_{t+1})) back to (z, x). shocks[t] is added to z_t
    before period t, after which u_t is re-solved from the shocked state;
    future shocks are taken to be zero.
    """
    system = p.system
    n_z = system.first_order.dims[0]
    eps = np.asarray(shocks, dtype=float).reshape(-1, n_z)
    if len(eps) < T:
        raise ContractError(f'need {T} shocks, got {len(eps)}')
    x = np.asarray(x0, dtype=float).copy()
    z = np.atleast_1d(np.asarray(z0, dtype=float)).copy()
    u = v = None
    us, vs = [], []
    for t in range(T + 1):
        shock = eps[t] if t < T else np.zeros(n_z)
        if u is None or np.any(shock):
            z = z + shock
            u = solve_initial(p, split, x, z)
            v = p.evaluate(u)
        us.append(u)
        vs.append(v)
        if t == T:
            break
        F, _ = system.fg(u, v)
        u = u @ split.A.T + F
        v = p.evaluate(u)
        z_next, x_next, _ = _levels(system, u, v)
        z, x = z_next[0], x_next[0]
    return _trajectory(system, np.array(us), np.array(vs))


def path_residuals(model, traj):
    """|f(y_{t+1}, y_t, x_{t+1}, x_t, z_t)| along a path (NaN at the end)"""
    out = np.full(traj.length, np.nan)
    if traj.length > 1:
        f = eval_residual(model, traj.y_path[1:], traj.y_path[:-1],
                          traj.x_path[1:], traj.x_path[:-1],
                          traj.z_path[:-1])
        out[:-1] = np.linalg.norm(f, axis=1)
    return out


def exogenous_path(sys, u0, n):
    """u_0..u_n of u_{t+1} = A u_t + F(u_t, .) when F ignores v"""
    u = np.atleast_2d(np.asarray(u0, dtype=float))
    zeros = np.zeros((1, sys.n_v))
    path = [u[0]]
    for _ in range(n):
        F, _ = sys.fg(u, zeros)
        u = u @ sys.split.A.T + F
        path.append(u[0])
    return np.array(path)


def _check_exogenous(sys, u_path):
    offset = np.full((len(u_path), sys.n_v), 0.01)
    F0, _ = sys.fg(u_path, np.zeros_like(offset))
    F1, _ = sys.fg(u_path, offset)
    gap = float(np.max(np.abs(F1 - F0), initial=0.0))
    if gap > 1e-12:
        raise ContractError(
            f'extended path needs F independent of v (deviation {gap:.3e})'
        )


def solve_ep(sys, u_path, cfg):
    """Extended path with zero terminal value.

    Type II sweep j solves, for every i = 0..n at once,
    V^j_i = -B^{-1} G(u_i, V^j_i) + B^{-1} V^{j-1}_{i+1} by Picard
    iteration (Type I), with V^0 = 0 and V^{j-1}_{n+1} = 0.
    """
    u = np.atleast_2d(np.asarray(u_path, dtype=float))
    n = cfg.horizon
    if len(u) < n + 1:
        raise ContractError(
            f'u_path has {len(u)} points, horizon {n} needs {n + 1}'
        )
    u = u[:n + 1]
    _check_exogenous(sys, u)
    B_inv = sys.split.B_inv
    prev = np.zeros((n + 2, sys.n_v))
    sweeps = []
    for j in range(1, cfg.type2_iters + 1):
        shifted = prev[1:] @ B_inv.T
        V = np.zeros((n + 1, sys.n_v))
        for it in range(1, cfg.max_iter + 1):
            _, G = sys.fg(u, V)
            nxt = shifted - G @ B_inv.T
            diff = np.max(np.linalg.norm(nxt - V, axis=1))
            V = nxt
            if not np.all(np.isfinite(V)):
                break
            if diff <= cfg.tol:
                break
        else:
            it = cfg.max_iter + 1
        if it > cfg.max_iter or not np.all(np.isfinite(V)):
            raise NonContractionError(
                f'Type I iteration of sweep {j} did not converge '
                f'(last change {diff:.3e})',
                order=j, residual=float(diff),
            )
        logger.debug('EP sweep %d: %d Type I iterations', j, it)
        sweeps.append(V)
        prev = np.vstack([V, np.zeros((1, sys.n_v))])
    return EPResult(V=np.array(sweeps), u_path=u, config=cfg)
