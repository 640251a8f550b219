"""Neoclassical growth model with log utility and full depreciation.

The state is k_t (x) and the control is k_{t+1} (y). The Euler equation
solved for k_{t+2} is linear in next-period variables:

    k_{t+2} = (1 + a b) k_{t+1}^a - a b k_t^a k_{t+1}^(a - 1),

and the exact policy is k_{t+1} = a b k_t^a.
"""
import logging
import math
from dataclasses import dataclass, fields

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import binom

from core.exceptions import ConfigError, ContractError
from core.manifold import FirstIterate, PolicyApprox
from core.model import Jacobians, ModelSpec
from core.numerics import newton_solve
from core.spectral import rescale_split

logger = logging.getLogger(__name__)

# largest continuation step in log k
LOG_STEP = 0.05
BRANCH_JUMP = 20.0
TRACE_TOL = 1e-12
TRACE_MAX_ITER = 50
TAYLOR_ORDERS = (1, 2, 5, 16)


@dataclass(frozen=True)
class GrowthParams:
    alpha: float = 0.36
    beta: float = 0.99

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f'alpha must lie in (0, 1), got {self.alpha}')
        if not self.beta > 0:
            raise ConfigError(f'beta must be positive, got {self.beta}')

    @classmethod
    def from_dict(cls, params):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(params) - names)
        if unknown:
            raise ConfigError(f'unknown parameters: {", ".join(unknown)}')
        try:
            values = {k: float(v) for k, v in params.items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f'bad parameter value: {exc}') from exc
        return cls(**values)

    @property
    def k_bar(self):
        return (self.alpha * self.beta) ** (1.0 / (1.0 - self.alpha))


def _residual(params):
    a, b = params.alpha, params.beta

    def f(y_next, y, x_next, x, z):
        with np.errstate(invalid='ignore', divide='ignore'):
            euler = ((1 + a * b) * y ** a - a * b * x ** a * y ** (a - 1)
                     - y_next)
        return np.concatenate([euler, x_next - y], axis=-1)
    return f


def _jacobians(params):
    a, b = params.alpha, params.beta

    def provider(ss):
        k = float(ss.x_bar[0])
        kn = float(ss.y_bar[0])
        f2 = ((1 + a * b) * a * kn ** (a - 1)
              - a * b * (a - 1) * k ** a * kn ** (a - 2))
        f4 = -a * a * b * k ** (a - 1) * kn ** (a - 1)
        return Jacobians(
            f1=np.array([[-1.0], [0.0]]),
            f2=np.array([[f2], [-1.0]]),
            f3=np.array([[0.0], [1.0]]),
            f4=np.array([[f4], [0.0]]),
            f5=np.zeros((2, 0)),
        )
    return provider


def build_growth(params, guess=None):
    """Growth model in (k_t, k_{t+1}) form; Newton starts at k_bar unless
    `guess` is given"""
    if guess is None:
        guess = params.k_bar
    return ModelSpec(
        n_x=1, n_y=1, n_z=0,
        residual=_residual(params),
        lam=np.zeros((0, 0)),
        steady_guess=np.full(2, float(guess)),
        jacobians=_jacobians(params),
        form9=True,
        name='growth',
        params={'alpha': params.alpha, 'beta': params.beta},
    )


def closed_form(params, k):
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise ContractError('capital must be positive')
    return params.alpha * params.beta * k ** params.alpha


def taylor_policy(params, order, k):
    """Order-`order` Taylor polynomial of a b k^a around k_bar"""
    if order < 1:
        raise ContractError('Taylor order must be at least 1')
    a, kb = params.alpha, params.k_bar
    dk = np.asarray(k, dtype=float) - kb
    total = np.zeros_like(dk)
    for m in range(order + 1):
        total = total + a * params.beta * binom(a, m) * kb ** (a - m) * dk ** m
    return total


def normalize_split(split):
    """Scale Z so that its first row is all ones"""
    head = split.Z[0]
    if np.any(head == 0):
        raise ContractError('Z has a zero in its first row')
    return rescale_split(split, 1.0 / head)


def _oracle_point(params, Z, u):
    a, b, kb = params.alpha, params.beta, params.k_bar
    z00, z01 = Z[0]
    z10, z11 = Z[1]
    slope = z11 / z01
    if slope <= 0:
        return np.nan
    offset = kb + z10 * u - slope * (kb + z00 * u)

    def phi(k):
        return offset + slope * k - a * b * k ** a

    # phi is increasing in k beyond the fold and its root there is the policy
    fold = (slope / (a * a * b)) ** (1.0 / (a - 1.0))
    k_lo = fold * (1 + 1e-12)
    if phi(k_lo) > 0:
        return np.nan
    k_hi = max(2.0 * k_lo, kb)
    while phi(k_hi) < 0:
        k_hi *= 2.0
    k = brentq(phi, k_lo, k_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return (k - kb - z00 * u) / z01


def closed_form_manifold(params, split, u):
    """Exact h(u) in transformed coordinates (NaN off the policy branch)"""
    arr = np.asarray(u, dtype=float)
    single = arr.ndim == 1
    flat = np.atleast_2d(arr)[:, 0]
    values = np.array([_oracle_point(params, split.Z, float(x))
                       for x in flat])
    out = values[:, None]
    return out[0] if single else out


def parametric_policy(p, split, params, u_grid, strict=True):
    """Graph {(k, k_next)} of the policy implied by h* on a u grid"""
    u = np.asarray(u_grid, dtype=float).reshape(-1, 1)
    h = np.atleast_2d(p.evaluate(u, strict=strict))
    w = np.hstack([u, h]) @ split.Z.T
    return w + params.k_bar


def _predict(path, k):
    """Linear extrapolation of the last two continuation points to k"""
    k1, x1 = path[-1]
    if len(path) < 2 or path[-2][0] == k1:
        return x1
    k0, x0 = path[-2]
    return x1 + (x1 - x0) * (k - k1) / (k1 - k0)


def _advance(solve, path, target):
    start = path[-1][0]
    n = max(1, math.ceil(abs(math.log(target / start)) / LOG_STEP))
    for k in np.geomspace(start, target, n + 1)[1:]:
        seed = _predict(path, k)
        x = solve(k, seed)
        if x is None:
            return None
        # a long jump from the prediction means another branch was found
        if np.linalg.norm(x - seed) > BRANCH_JUMP * abs(k - path[-1][0]) \
                + TRACE_TOL:
            return None
        path.append((k, x))
    return path[-1][1]


def trace_policy(p, split, params, k_grid):
    """(u, h*(u)) on the graph of h* through each k of the grid.

    Each point solves k = k_bar + Z00 u + Z01 v_0 jointly with the
    fixed-point chain of h* (`p.chain`), continuing in k outward from the
    steady state with every solve seeded by a linear prediction. The
    branch through the steady state is followed past the fold of the graph
    over u near k = 0; points the continuation cannot reach are NaN.
    """
    k = np.asarray(k_grid, dtype=float)
    if p.system.n_u != 1:
        raise ContractError('trace_policy needs a scalar state')
    if np.any(k <= 0):
        raise ContractError('capital must be positive')
    kb = params.k_bar
    z00, z01 = split.Z[0]
    size = 1 + p.chain_size

    def solve(target, seed):
        def residual(x, rows):
            u, V = x[:, :1], x[:, 1:]
            v0 = V[:, 0] if V.shape[1] else 0.0
            head = z00 * u[:, 0] + z01 * v0 - (target - kb)
            return np.column_stack([head, p.chain(u, V)])

        result = newton_solve(residual, seed[None, :], TRACE_TOL,
                              TRACE_MAX_ITER)
        return result.x[0] if result.converged[0] else None

    points = np.full((len(k), size), np.nan)
    up = np.flatnonzero(k >= kb)
    down = np.flatnonzero(k < kb)
    for rows in (up[np.argsort(k[up])], down[np.argsort(-k[down])]):
        path = [(kb, np.zeros(size))]
        for row in rows:
            x = _advance(solve, path, k[row])
            if x is None:
                break
            points[row] = x
    failed = int(np.isnan(points[:, 0]).sum())
    if failed:
        logger.warning('k -> u inversion failed at %d of %d grid points',
                       failed, len(k))
    u = points[:, 0]
    v = points[:, 1] if size > 1 else np.where(np.isnan(u), np.nan, 0.0)
    return u, v


def invert_policy_grid(p, split, params, k_grid):
    """u with k_bar + Z00 u + Z01 h*(u) = k for each k (NaN if none)"""
    return trace_policy(p, split, params, k_grid)[0]


def policy_grid(params, points):
    kb = params.k_bar
    return np.linspace(0.01 * kb, 5.0 * kb, points)


def policy_table(params, system, k_grid, orders=(1, 2, 3)):
    """k_next from the closed form, h_{1,1}, h_i and Taylor comparators"""
    split = system.split
    z10, z11 = split.Z[1]
    k = np.asarray(k_grid, dtype=float)
    table = {'k': k, 'closed_form': closed_form(params, k)}
    policies = [('h11', FirstIterate(system))] + [
        (f'h{n}', PolicyApprox(n, system)) for n in orders
    ]
    for name, policy in policies:
        u, v = trace_policy(policy, split, params, k)
        table[name] = params.k_bar + z10 * u + z11 * v
    for n in TAYLOR_ORDERS:
        table[f'taylor{n}'] = taylor_policy(params, n, k)
    return pd.DataFrame(table)


def error_table(params, system, orders, u_grid, inner_solver='picard'):
    """Sup errors of h_n against the exact manifold, with successive ratios"""
    u = np.asarray(u_grid, dtype=float).reshape(-1, 1)
    exact = closed_form_manifold(params, system.split, u)
    rows = []
    previous = None
    for n in orders:
        p = PolicyApprox(n, system, inner_solver=inner_solver)
        err = float(np.nanmax(np.abs(p.evaluate(u, strict=False) - exact)))
        ratio = err / previous if previous else np.nan
        rows.append({'order': n, 'sup_error': err, 'ratio': ratio})
        previous = err
    return pd.DataFrame(rows)
