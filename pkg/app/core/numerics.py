"""Batched finite differences and Newton iteration.

Every callable handled here maps a batch of points of shape (m, d) to a
batch of values of shape (m, k), row by row.
"""
import logging
from dataclasses import dataclass

import numpy as np

from core.exceptions import ContractError

logger = logging.getLogger(__name__)

FD_STEP = np.cbrt(np.finfo(float).eps)
MAX_HALVINGS = 30


def as_batch(x, dim):
    """Return (2-D view of x, whether x was a single point)"""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != dim:
        raise ContractError(
            f'expected trailing dimension {dim}, got {arr.shape[-1]}'
        )
    return arr, single


def _central(func, x, scale):
    m, d = x.shape
    columns = []
    for j in range(d):
        h = scale * np.maximum(1.0, np.abs(x[:, j]))
        xp = x.copy()
        xm = x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        fp = np.asarray(func(xp), dtype=float)
        fm = np.asarray(func(xm), dtype=float)
        span = (xp[:, j] - xm[:, j])[:, None]
        columns.append((fp - fm) / span)
    if not columns:
        k = np.asarray(func(x)).shape[-1]
        return np.zeros((m, k, 0))
    return np.stack(columns, axis=-1)


def central_jacobian(func, x, step=None, richardson=False):
    """Central-difference Jacobian of a batched map.

    The step is cbrt(eps) * max(1, |x_j|) unless `step` overrides the
    factor. With `richardson` the h and h/2 estimates are combined to
    cancel the O(h^2) term.
    """
    arr, single = as_batch(x, np.asarray(x).shape[-1])
    scale = FD_STEP if step is None else step
    jac = _central(func, arr, scale)
    if richardson:
        half = _central(func, arr, scale / 2)
        jac = (4.0 * half - jac) / 3.0
    return jac[0] if single else jac


@dataclass
class NewtonResult:
    x: np.ndarray
    residual_norm: np.ndarray
    converged: np.ndarray
    singular: np.ndarray
    iterations: int


def newton_solve(func, x0, tol, max_iter, cond_limit=1e14):
    """Damped Newton iteration on a batch of independent square systems.

    `func(x, rows)` evaluates the residuals of the systems whose batch
    indices are `rows` at the points `x` (one row per index).

    Steps are halved up to MAX_HALVINGS times until the residual norm
    decreases; rows that cannot decrease stall and are reported as not
    converged.
    """
    x = np.array(np.atleast_2d(x0), dtype=float)
    with np.errstate(all='ignore'):
        r = np.asarray(func(x, np.arange(len(x))), dtype=float)
    norms = np.linalg.norm(r, axis=1)
    singular = np.zeros(len(x), dtype=bool)
    stalled = ~np.isfinite(norms)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        active = np.flatnonzero((norms > tol) & ~stalled & ~singular)
        if active.size == 0:
            iterations -= 1
            break
        xa = x[active]
        with np.errstate(all='ignore'):
            jac = central_jacobian(lambda p: func(p, active), xa)
        if not np.all(np.isfinite(jac)):
            bad = ~np.all(np.isfinite(jac), axis=(1, 2))
            stalled[active[bad]] = True
            keep = ~bad
            active, xa, jac = active[keep], xa[keep], jac[keep]
            if active.size == 0:
                continue
        conds = np.linalg.cond(jac)
        ill = ~(conds < cond_limit)
        singular[active[ill]] = True
        active, xa, jac = active[~ill], xa[~ill], jac[~ill]
        if active.size == 0:
            continue
        step = np.linalg.solve(jac, -r[active][..., None])[..., 0]
        t = np.ones(active.size)
        accepted = np.zeros(active.size, dtype=bool)
        base = norms[active]
        for _ in range(MAX_HALVINGS + 1):
            trial = xa + t[:, None] * step
            with np.errstate(all='ignore'):
                rt = np.asarray(func(trial, active), dtype=float)
            nt = np.linalg.norm(rt, axis=1)
            ok = ~accepted & np.isfinite(nt) & (nt < base)
            rows = active[ok]
            x[rows] = trial[ok]
            r[rows] = rt[ok]
            norms[rows] = nt[ok]
            accepted |= ok
            if accepted.all():
                break
            t[~accepted] *= 0.5
        stalled[active[~accepted]] = True
    converged = norms <= tol
    logger.debug('newton: %d iterations, %d/%d converged',
                 iterations, int(converged.sum()), len(x))
    return NewtonResult(x, norms, converged, singular, iterations)
