"""Block-diagonal split K = Z diag(A, B) Z^{-1} and the transformed system.

The split is an ordered real Schur form (stable eigenvalues first), a
Sylvester solve that removes the coupling block, a rotation-scaling
standardization of 2x2 diagonal bumps, and a diagonal balancing of each
block so that ||A|| and ||B^{-1}|| approach the spectral radii.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from core.exceptions import (
    BlanchardKahnError,
    ConstructionError,
    ContractError,
    UnitRootError,
)
from core.numerics import as_batch, central_jacobian

logger = logging.getLogger(__name__)

EPS_UNIT = 1e-8
BALANCING_FACTORS = (1.0, 0.5, 0.1, 0.01)
ORIGIN_TOL = 1e-8


def spectral_norm(mat):
    if mat.size == 0:
        return 0.0
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def spectral_radius(mat):
    if mat.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


@dataclass(frozen=True)
class SpectralSplit:
    Z: np.ndarray
    Z_inv: np.ndarray
    A: np.ndarray
    B: np.ndarray
    normA: float
    normBinv: float
    gamma_slack: float

    @property
    def n_u(self):
        return self.A.shape[0]

    @property
    def n_v(self):
        return self.B.shape[0]

    @property
    def B_inv(self):
        return np.linalg.inv(self.B)

    @property
    def P(self):
        return linalg.block_diag(self.A, self.B)


def _make_split(Z, A, B):
    B_inv = np.linalg.inv(B)
    normA = spectral_norm(A)
    normBinv = spectral_norm(B_inv)
    slack = max(normA - spectral_radius(A),
                normBinv - spectral_radius(B_inv), 0.0)
    return SpectralSplit(
        Z=Z, Z_inv=np.linalg.inv(Z), A=A, B=B,
        normA=normA, normBinv=normBinv, gamma_slack=slack,
    )


def _diagonal_blocks(T):
    """(start, size) of the 1x1 and 2x2 diagonal blocks of a real Schur form"""
    n = T.shape[0]
    scale = max(np.abs(T).max(), 1.0) if n else 1.0
    blocks = []
    i = 0
    while i < n:
        if i + 1 < n and abs(T[i + 1, i]) > 1e-14 * scale:
            blocks.append((i, 2))
            i += 2
        else:
            blocks.append((i, 1))
            i += 1
    return blocks


def _standardize_bumps(T):
    """Similarity turning each 2x2 bump into [[a, b], [-b, a]]"""
    n = T.shape[0]
    W = np.eye(n)
    for start, size in _diagonal_blocks(T):
        if size != 2:
            continue
        block = T[start:start + 2, start:start + 2]
        vals, vecs = np.linalg.eig(block)
        k = int(np.argmax(vals.imag))
        vec = vecs[:, k]
        W[start:start + 2, start:start + 2] = np.column_stack(
            [vec.real, vec.imag]
        )
    return W


def _balance(T, invert):
    """Pick the block-wise geometric scaling that minimizes the norm slack"""
    n = T.shape[0]
    if n == 0:
        return np.eye(0), 1.0
    W = _standardize_bumps(T)
    T = np.linalg.solve(W, T @ W)
    blocks = _diagonal_blocks(T)
    best = None
    for delta in BALANCING_FACTORS:
        d = np.empty(n)
        for k, (start, size) in enumerate(blocks):
            d[start:start + size] = delta ** k
        D = np.diag(d)
        scaled = np.diag(1.0 / d) @ T @ D
        target = np.linalg.inv(scaled) if invert else scaled
        slack = spectral_norm(target) - spectral_radius(target)
        if best is None or slack < best[0] - 1e-15:
            best = (slack, W @ D, delta)
    logger.debug('balancing factor %g (slack %.3e)', best[2], best[0])
    return best[1], best[2]


def _already_split(K, n_u):
    A = K[:n_u, :n_u]
    B = K[n_u:, n_u:]
    if np.any(K[:n_u, n_u:]) or np.any(K[n_u:, :n_u]):
        return False
    if B.size == 0 or abs(np.linalg.det(B)) == 0.0:
        return False
    return spectral_norm(A) < 1.0 and spectral_norm(np.linalg.inv(B)) < 1.0


def schur_split(K, n_u, eps_unit=EPS_UNIT):
    """Split K into stable block A (size n_u) and unstable block B"""
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    if K.shape != (n, n) or not 0 <= n_u <= n:
        raise ContractError(f'bad shapes: K {K.shape}, n_u={n_u}')
    eigenvalues = np.linalg.eigvals(K)
    moduli = np.abs(eigenvalues)
    near = np.abs(moduli - 1.0) <= eps_unit
    if near.any():
        raise UnitRootError(eigenvalues[near], eps_unit)
    found = int(np.sum(moduli < 1.0))
    if found != n_u:
        raise BlanchardKahnError(found, n_u)
    if _already_split(K, n_u):
        logger.debug('K already block diagonal, using Z = I')
        return _make_split(np.eye(n), K[:n_u, :n_u].copy(),
                           K[n_u:, n_u:].copy())

    T, Q, sdim = linalg.schur(K, output='real', sort='iuc')
    if sdim != n_u:
        raise BlanchardKahnError(sdim, n_u)
    T11, T12, T22 = T[:n_u, :n_u], T[:n_u, n_u:], T[n_u:, n_u:]
    # T11 Y - Y T22 = -T12 removes the coupling block
    Y = linalg.solve_sylvester(T11, -T22, -T12)
    S = np.eye(n)
    S[:n_u, n_u:] = Y

    D_u, _ = _balance(T11, invert=False)
    D_v, _ = _balance(T22, invert=True)
    D = linalg.block_diag(D_u, D_v)
    Z = Q @ S @ D
    A = np.linalg.solve(D_u, T11 @ D_u)
    B = np.linalg.solve(D_v, T22 @ D_v)
    split = _make_split(Z, A, B)
    logger.debug('split: ||A||=%.6g ||B^-1||=%.6g slack=%.3e',
                 split.normA, split.normBinv, split.gamma_slack)
    if split.normA >= 1.0 or split.normBinv >= 1.0:
        logger.warning('balancing left ||A||=%.6g, ||B^-1||=%.6g; '
                       'the norm inequalities do not hold',
                       split.normA, split.normBinv)
    return split


def rescale_split(split, scales):
    """Scale the columns of Z, compensating in A and B"""
    s = np.asarray(scales, dtype=float)
    n_u = split.n_u
    Z = split.Z * s
    A = split.A * s[None, :n_u] / s[:n_u, None]
    B = split.B * s[None, n_u:] / s[n_u:, None]
    return _make_split(Z, A, B)


@dataclass(frozen=True)
class TransformedSystem:
    """u_{t+1} = A u + F(u, v), v_{t+1} = B v + G(u, v)"""
    split: SpectralSplit
    first_order: object
    dims: tuple

    @property
    def n_u(self):
        return self.dims[0]

    @property
    def n_v(self):
        return self.dims[1]

    def fg(self, u, v):
        """(F(u, v), G(u, v)) on batches"""
        ua, single = as_batch(u, self.n_u)
        va, _ = as_batch(v, self.n_v)
        w = np.hstack([ua, va]) @ self.split.Z.T
        out = self.first_order.nonlinear(w) @ self.split.Z_inv.T
        F, G = out[:, :self.n_u], out[:, self.n_u:]
        if single:
            return F[0], G[0]
        return F, G

    def F(self, u, v):
        return self.fg(u, v)[0]

    def G(self, u, v):
        return self.fg(u, v)[1]

    def step(self, u, v):
        """One step of the transformed dynamics"""
        F, G = self.fg(u, v)
        u_next = np.asarray(u) @ self.split.A.T + F
        v_next = np.asarray(v) @ self.split.B.T + G
        return u_next, v_next

    def stacked(self, uv):
        """(F, G) as one map of stacked (u, v) batches"""
        F, G = self.fg(uv[:, :self.n_u], uv[:, self.n_u:])
        return np.hstack([F, G])

    def to_original(self, u, v):
        """Deviations w = (z, x_hat, y_hat) for transformed coordinates"""
        return np.hstack([np.atleast_2d(u), np.atleast_2d(v)]) @ self.split.Z.T

    def to_transformed(self, w):
        out = np.atleast_2d(w) @ self.split.Z_inv.T
        return out[:, :self.n_u], out[:, self.n_u:]


def origin_defects(system):
    """|F(0,0)|, |G(0,0)| and the norms of their Jacobians at the origin"""
    n = system.n_u + system.n_v
    origin = np.zeros(n)
    values = system.stacked(origin[None, :])[0]
    jac = central_jacobian(system.stacked, origin, richardson=True)
    return {
        'F': float(np.linalg.norm(values[:system.n_u])),
        'G': float(np.linalg.norm(values[system.n_u:])),
        'dF': spectral_norm(jac[:system.n_u]),
        'dG': spectral_norm(jac[system.n_u:]),
    }


def build_transformed(sys, split, tol=ORIGIN_TOL):
    """Transformed system (F, G) = Z^{-1} N_1(Z (u, v))"""
    n_z, n_x, n_y = sys.dims
    if split.Z.shape[0] != sys.size or split.n_u != n_z + n_x:
        raise ContractError(
            f'split of size {split.Z.shape[0]} with n_u={split.n_u} does '
            f'not match dims {sys.dims}'
        )
    system = TransformedSystem(split=split, first_order=sys,
                               dims=(n_z + n_x, n_y))
    defects = origin_defects(system)
    worst = max(defects.values())
    if not worst <= tol:
        raise ConstructionError(
            f'transformed system does not vanish to first order at the '
            f'origin: {defects}'
        )
    return system
