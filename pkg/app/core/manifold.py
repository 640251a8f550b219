"""Approximate policy functions h_i and their certificates.

h_0 = 0 and h_i is the fixed point of

    T_{i,u}(v) = -B^{-1} G(u, v) + B^{-1} h_{i-1}(A u + F(u, v)),

evaluated recursively on batches of points. The module also checks the
contraction Conditions 1-3 on a ball, evaluates the a priori bounds and
provides the explicit Hadamard iteration and the truncated Lyapunov-Perron
sum for comparison.
"""
import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm as normal
from scipy.stats import qmc

from core.exceptions import (
    ConditionError,
    ContractError,
    DivergenceError,
    NonContractionError,
)
from core.numerics import as_batch, central_jacobian, newton_solve

logger = logging.getLogger(__name__)

SAMPLE_SEED = 20240521
INNER_TOL = 1e-12
INNER_MAX_ITER = 200
CACHE_PITCH = 2048
CACHE_MAX_ENTRIES = 100_000
OVERFLOW = 1e150


@dataclass(frozen=True)
class DomainSpec:
    r_u: float
    r_v: float
    sample_count: int = 4096

    def __post_init__(self):
        if not (self.r_u > 0 and self.r_v > 0):
            raise ContractError(
                f'radii must be positive, got r_u={self.r_u}, r_v={self.r_v}'
            )
        if self.sample_count < 1:
            raise ContractError('sample_count must be positive')


def _ball_points(coords, dim, radius):
    """Map unit-cube coordinates (m, dim + 1) into a closed ball"""
    m = len(coords)
    if dim == 0:
        return np.zeros((m, 0))
    g = normal.ppf(np.clip(coords[:, :dim], 1e-12, 1 - 1e-12))
    length = np.linalg.norm(g, axis=1)
    flat = length == 0
    g[flat] = 0.0
    g[flat, 0] = 1.0
    length[flat] = 1.0
    radii = radius * coords[:, dim] ** (1.0 / dim)
    return g / length[:, None] * radii[:, None]


def _sobol(dim, count, seed=SAMPLE_SEED):
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    return sampler.random_base2(max(0, math.ceil(math.log2(count))))[:count]


def sample_ball(dim, radius, count, seed=SAMPLE_SEED):
    """Deterministic low-discrepancy points of the closed ball U_r"""
    coords = _sobol(dim + 1, count, seed)
    pts = _ball_points(coords, dim, radius)
    shell = _ball_points(np.column_stack(
        [coords[:, :dim], np.ones(len(coords))]), dim, radius)
    return np.vstack([np.zeros((1, dim)), pts, shell[: max(1, count // 4)]])


def sample_domain(n_u, n_v, dom, seed=SAMPLE_SEED):
    """Deterministic points of X = U_{r_u} + V_{r_v}, boundary-weighted"""
    coords = _sobol(n_u + n_v + 2, dom.sample_count, seed)
    cu = coords[:, :n_u + 1]
    cv = coords[:, n_u + 1:]
    interior = np.hstack([_ball_points(cu, n_u, dom.r_u),
                          _ball_points(cv, n_v, dom.r_v)])
    edge = coords[: max(1, dom.sample_count // 4)].copy()
    edge[:, n_u] = 1.0
    edge[:, -1] = 1.0
    shell = np.hstack([_ball_points(edge[:, :n_u + 1], n_u, dom.r_u),
                       _ball_points(edge[:, n_u + 1:], n_v, dom.r_v)])
    return np.vstack([np.zeros((1, n_u + n_v)), interior, shell])


def _block_norms(jac):
    if jac.shape[1] == 0 or jac.shape[2] == 0:
        return np.zeros(len(jac))
    return np.linalg.norm(jac, ord=2, axis=(1, 2))


@dataclass(frozen=True)
class ConditionReport:
    sup_G: float
    L: float
    cond1_ok: bool
    cond2_ok: bool
    cond3_ok: bool
    cond1_rhs: float
    cond2_rhs: float
    rho: float
    samples_used: int
    r_u: float
    r_v: float
    normA: float
    normBinv: float
    sup_step: float

    @property
    def all_ok(self):
        return self.cond1_ok and self.cond2_ok and self.cond3_ok

    def as_dict(self):
        return {
            'r_u': self.r_u,
            'r_v': self.r_v,
            'sup_G': self.sup_G,
            'L': self.L,
            'normA': self.normA,
            'normBinv': self.normBinv,
            'cond1_rhs': self.cond1_rhs,
            'cond2_rhs': self.cond2_rhs,
            'cond1_ok': self.cond1_ok,
            'cond2_ok': self.cond2_ok,
            'cond3_ok': self.cond3_ok,
            'rho': self.rho,
            'samples_used': self.samples_used,
        }


def check_conditions(sys, dom):
    """Estimate ||G||, L and test Conditions 1-3 on X_{r_u, r_v}"""
    split = sys.split
    n_u, n_v = sys.n_u, sys.n_v
    pts = sample_domain(n_u, n_v, dom)
    with np.errstate(all='ignore'):
        values = sys.stacked(pts)
        jac = central_jacobian(sys.stacked, pts)
    F, G = values[:, :n_u], values[:, n_u:]
    g_norms = np.linalg.norm(G, axis=1)
    dF = _block_norms(jac[:, :n_u, :])
    dG = _block_norms(jac[:, n_u:, :])
    finite = (np.all(np.isfinite(values)) and np.all(np.isfinite(jac)))
    sup_G = float(g_norms.max()) if finite else math.inf
    L = float(max(dF.max(), dG.max())) if finite else math.inf
    steps = np.linalg.norm(pts[:, :n_u] @ split.A.T + F, axis=1)
    sup_step = float(steps.max()) if finite else math.inf

    b = split.normBinv
    cond1_rhs = (1.0 - b) / b * dom.r_v
    cond2_rhs = (1.0 / b - split.normA) / 4.0
    report = ConditionReport(
        sup_G=sup_G,
        L=L,
        cond1_ok=bool(sup_G < cond1_rhs),
        cond2_ok=bool(L < cond2_rhs),
        cond3_ok=bool(sup_step <= dom.r_u * (1 + 1e-12)),
        cond1_rhs=cond1_rhs,
        cond2_rhs=cond2_rhs,
        rho=b * L,
        samples_used=len(pts),
        r_u=dom.r_u,
        r_v=dom.r_v,
        normA=split.normA,
        normBinv=b,
        sup_step=sup_step,
    )
    if not report.all_ok:
        logger.info('conditions on r_u=%g r_v=%g: %s', dom.r_u, dom.r_v,
                    (report.cond1_ok, report.cond2_ok, report.cond3_ok))
    return report


def search_verified_domain(sys, radii, sample_count=4096):
    """Largest r on the grid with Conditions 1-3 holding for r_u = r_v = r"""
    best = None
    for r in sorted(radii):
        dom = DomainSpec(r, r, sample_count)
        report = check_conditions(sys, dom)
        if report.all_ok:
            best = (dom, report)
    if best is None:
        raise ConditionError(
            f'Conditions 1-3 fail on every radius in {sorted(radii)}'
        )
    logger.debug('verified radius %g', best[0].r_u)
    return best


class PolicyCache:
    """Per-order memo of h_i values keyed by quantized u.

    A hit requires the stored point to equal the query, so cached and
    uncached evaluation agree exactly. Buckets are dropped least recently
    used first once more than `max_entries` values are held.
    """

    def __init__(self, pitch, max_entries=CACHE_MAX_ENTRIES):
        if max_entries < 1:
            raise ContractError('cache needs room for at least one entry')
        self.pitch = pitch
        self.max_entries = max_entries
        self._store = OrderedDict()
        self._size = 0
        self._lock = threading.Lock()

    def _key(self, order, u):
        return (order,) + tuple(np.round(u / self.pitch).astype(int))

    def get(self, order, u):
        key = self._key(order, u)
        with self._lock:
            for point, value in self._store.get(key, ()):
                if np.array_equal(point, u):
                    self._store.move_to_end(key)
                    return value
        return None

    def put(self, order, u, value):
        key = self._key(order, u)
        with self._lock:
            bucket = self._store.setdefault(key, [])
            bucket.append((u.copy(), value.copy()))
            self._store.move_to_end(key)
            self._size += 1
            while self._size > self.max_entries:
                _, dropped = self._store.popitem(last=False)
                self._size -= len(dropped)

    def clear(self):
        with self._lock:
            self._store.clear()
            self._size = 0

    def __len__(self):
        return self._size


def chain_residual(system, order, u, V):
    """Residuals of the nested fixed points that define h_order at u.

    V stacks (v_0, ..., v_{order-1}) row-wise, v_t standing for
    h_{order-t}(u_t) along u_{t+1} = A u_t + F(u_t, v_t). Block t is
    B v_t + G(u_t, v_t) - v_{t+1} with v_order = 0, so a zero residual
    makes v_0 the fixed point of T_{order,u} with every inner solve exact.
    """
    split = system.split
    n_v = system.n_v
    blocks = []
    ut = u
    for t in range(order):
        vt = V[:, t * n_v:(t + 1) * n_v]
        F, G = system.fg(ut, vt)
        out = vt @ split.B.T + G
        if t + 1 < order:
            out = out - V[:, (t + 1) * n_v:(t + 2) * n_v]
        blocks.append(out)
        ut = ut @ split.A.T + F
    if not blocks:
        return np.zeros((len(u), 0))
    return np.hstack(blocks)


@dataclass
class PolicyApprox:
    order: int
    system: object
    inner_tol: float = INNER_TOL
    inner_max_iter: int = INNER_MAX_ITER
    domain: Optional[DomainSpec] = None
    inner_solver: str = 'picard'
    cache: Optional[PolicyCache] = field(default=None, repr=False)

    def __post_init__(self):
        if self.order < 0:
            raise ContractError('policy order must be nonnegative')
        if self.inner_solver not in ('picard', 'newton'):
            raise ContractError(f'unknown inner solver {self.inner_solver}')

    @property
    def B_inv(self):
        return self.system.split.B_inv

    @property
    def chain_size(self):
        return self.order * self.system.n_v

    def chain(self, u, V):
        return chain_residual(self.system, self.order, u, V)

    def enable_cache(self, max_entries=CACHE_MAX_ENTRIES):
        pitch = (self.domain.r_u if self.domain else 1.0) / CACHE_PITCH
        self.cache = PolicyCache(pitch, max_entries)
        return self

    def evaluate(self, u, strict=True):
        """h_order at u (a point or a batch).

        With `strict` a failed inner solve raises NonContractionError;
        otherwise the failed rows come back as NaN.
        """
        ua, single = as_batch(u, self.system.n_u)
        v, ok, residual = self._level(self.order, ua)
        if strict and not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise NonContractionError(
                f'inner fixed-point iteration for h_{self.order} failed at '
                f'u={ua[bad]} (last residual {residual[bad]:.3e})',
                order=self.order, residual=float(residual[bad]),
            )
        v = np.where(ok[:, None], v, np.nan)
        return v[0] if single else v

    def T(self, order, u, v):
        """T_{order,u}(v) on batches; returns (values, finite mask)"""
        split = self.system.split
        with np.errstate(all='ignore'):
            F, G = self.system.fg(u, v)
            inner, ok, _ = self._level(order - 1, u @ split.A.T + F)
            out = (inner - G) @ self.B_inv.T
        ok = ok & np.all(np.isfinite(out), axis=1)
        return out, ok

    def _level(self, order, u):
        m = len(u)
        n_v = self.system.n_v
        if order == 0:
            return np.zeros((m, n_v)), np.ones(m, dtype=bool), np.zeros(m)
        if self.cache is None:
            return self._solve(order, u)
        v = np.zeros((m, n_v))
        ok = np.zeros(m, dtype=bool)
        residual = np.zeros(m)
        missing = []
        for i in range(m):
            hit = self.cache.get(order, u[i])
            if hit is None:
                missing.append(i)
            else:
                v[i], ok[i] = hit, True
        if missing:
            idx = np.array(missing)
            vs, oks, res = self._solve(order, u[idx])
            v[idx], ok[idx], residual[idx] = vs, oks, res
            for i, value, good in zip(idx, vs, oks):
                if good:
                    self.cache.put(order, u[i], value)
        return v, ok, residual

    def _solve(self, order, u, trace=None):
        if self.inner_solver == 'newton':
            return self._newton(order, u)
        return self._picard(order, u, trace)

    def _picard(self, order, u, trace=None):
        m = len(u)
        v = np.zeros((m, self.system.n_v))
        ok = np.zeros(m, dtype=bool)
        residual = np.full(m, np.inf)
        active = np.arange(m)
        iterations = 0
        while active.size and iterations < self.inner_max_iter:
            iterations += 1
            Tv, finite = self.T(order, u[active], v[active])
            with np.errstate(invalid='ignore'):
                diff = np.linalg.norm(Tv - v[active], axis=1)
            if trace is not None:
                trace.append(diff.copy())
            v[active] = Tv
            residual[active] = diff
            done = finite & (diff <= self.inner_tol)
            ok[active[done]] = True
            active = active[~done & finite]
        logger.debug('picard h_%d: %d iterations, %d/%d converged',
                     order, iterations, int(ok.sum()), m)
        return v, ok, residual

    def _newton(self, order, u):
        # all nested levels at once from V = 0; v_0 is h_order(u)
        def residual(V, rows):
            return chain_residual(self.system, order, u[rows], V)

        seed = np.zeros((len(u), order * self.system.n_v))
        result = newton_solve(residual, seed, self.inner_tol,
                              self.inner_max_iter)
        v = result.x[:, :self.system.n_v]
        return v, result.converged, result.residual_norm


class FirstIterate:
    """h_{1,1}(u) = -B^{-1} G(u, 0), the first Picard iterate of h_1"""

    def __init__(self, system):
        self.system = system

    @property
    def chain_size(self):
        return self.system.n_v

    def chain(self, u, V):
        _, G = self.system.fg(u, np.zeros((len(u), self.system.n_v)))
        return V @ self.system.split.B.T + G

    def evaluate(self, u, strict=True):
        ua, single = as_batch(u, self.system.n_u)
        _, G = self.system.fg(ua, np.zeros((len(ua), self.system.n_v)))
        out = -G @ self.system.split.B_inv.T
        return out[0] if single else out


def eval_policy(p, u):
    return p.evaluate(u)


def picard_trace(p, u):
    """Successive top-level Picard increments |v_{k+1} - v_k| at one point"""
    ua, _ = as_batch(u, p.system.n_u)
    trace = []
    p._picard(p.order, ua[:1], trace)
    return np.array([float(d[0]) for d in trace if d.size])


def invariance_residual(p, u):
    """|B h(u) + G(u, h(u)) - h(A u + F(u, h(u)))|"""
    ua, single = as_batch(u, p.system.n_u)
    split = p.system.split
    h = p.evaluate(ua)
    F, G = p.system.fg(ua, h)
    h_next = p.evaluate(ua @ split.A.T + F)
    out = np.linalg.norm(h @ split.B.T + G - h_next, axis=1)
    return out[0] if single else out


def manifold_tail(sys, policy, u, n):
    """u_{t+n} along u_{s+1} = A u_s + F(u_s, h(u_s))"""
    ua, single = as_batch(u, sys.n_u)
    for _ in range(n):
        F, _ = sys.fg(ua, policy(ua))
        ua = ua @ sys.split.A.T + F
    return ua[0] if single else ua


def eval_policy_hadamard(sys, order, u):
    """Explicit iteration h_i(u) = B^{-1} (h_{i-1}(u') - G(u, h_{i-1}(u)))"""
    ua, single = as_batch(u, sys.n_u)
    split = sys.split
    B_inv = split.B_inv

    def h(i, pts):
        if i == 0:
            return np.zeros((len(pts), sys.n_v))
        prev = h(i - 1, pts)
        F, G = sys.fg(pts, prev)
        return (h(i - 1, pts @ split.A.T + F) - G) @ B_inv.T

    out = h(order, ua)
    return out[0] if single else out


@dataclass(frozen=True)
class LyapunovPerronResult:
    value: np.ndarray
    exit_step: Optional[int]
    u_path: np.ndarray


def eval_lyapunov_perron(sys, horizon, u0, v0, r_u=None):
    """Truncated sum -sum_{k=0}^{horizon} B^{-k-1} G(u_k, v_k).

    `exit_step` is the first k with |u_k| > r_u. Non-finite or overflowing
    iterates raise DivergenceError with the step index.
    """
    if horizon < 0:
        raise ContractError('horizon must be nonnegative')
    split = sys.split
    B_inv = split.B_inv
    u = np.asarray(u0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    power = B_inv.copy()
    total = np.zeros(sys.n_v)
    exit_step = None
    path = [u.copy()]
    for k in range(horizon + 1):
        with np.errstate(all='ignore'):
            F, G = sys.fg(u, v)
            total = total - power @ G
            u, v = u @ split.A.T + F, v @ split.B.T + G
        state = np.concatenate([u, v, total])
        if not np.all(np.isfinite(state)) or np.abs(state).max() > OVERFLOW:
            raise DivergenceError(k + 1, exit_step)
        path.append(u.copy())
        if exit_step is None and r_u is not None \
                and np.linalg.norm(u) > r_u:
            exit_step = k + 1
        power = power @ B_inv
    return LyapunovPerronResult(total, exit_step, np.array(path))


@dataclass(frozen=True)
class LemmaSequence:
    values: np.ndarray
    s1_star: float
    s2_star: float


def lemma_fixed_points(rho, c):
    """Roots of rho s^2 - (1 - 2 rho - c) s + rho = 0 (s1 <= s2)"""
    if rho == 0:
        return 0.0, math.inf
    b = 1.0 - 2.0 * rho - c
    disc = b * b - 4.0 * rho * rho
    root = math.sqrt(max(disc, 0.0))
    s1 = 2.0 * rho / (b + root)
    s2 = (b + root) / (2.0 * rho)
    return s1, s2


def lemma_recursion(rho, normA, normBinv, n):
    """s_{i+1} = (rho + (c + rho) s_i) / (1 - rho - rho s_i), c = b ||A||"""
    c = normBinv * normA
    if not (rho >= 0 and rho < (1.0 - c) / 4.0):
        raise ContractError(
            f'rho={rho} violates rho < (1 - ||B^-1|| ||A||)/4 = '
            f'{(1.0 - c) / 4.0}'
        )
    s = np.zeros(n + 1)
    for i in range(n):
        s[i + 1] = (rho + (c + rho) * s[i]) / (1.0 - rho - rho * s[i])
    s1, s2 = lemma_fixed_points(rho, c)
    return LemmaSequence(s, s1, s2)


@dataclass(frozen=True)
class ErrorBound:
    a: float
    apriori: float
    s1_star: float
    s2_star: float
    deriv_bound: float
    normA: float
    normBinv: float
    L: float
    n: int
    h_tail: float

    def corollary_rate(self, theta):
        return self.a * (self.normA + theta) ** 2

    def converges(self, theta):
        return self.corollary_rate(theta) < 1.0


def norm_bound(split, report, order):
    """Right side of the sup-norm bound on h_order"""
    b = split.normBinv
    return (1.0 - b ** (order + 1)) * b * report.sup_G / (1.0 - b)


def error_bound(split, report, n, h_tail=None):
    """A priori bound on |h_n(u_t) - h(u_t)| given a bound on |h(u_{t+n})|"""
    if not report.cond2_ok:
        raise ContractError('error bound needs Condition 2 to hold')
    if n < 1:
        raise ContractError('n must be at least 1')
    if h_tail is None:
        h_tail = report.r_v
    if h_tail < 0:
        raise ContractError('h_tail must be nonnegative')
    b, normA, L = split.normBinv, split.normA, report.L
    rho = b * L
    a = 2.0 * b / (1.0 + b * normA)
    apriori = a ** (n - 1) * b / (1.0 - rho) * h_tail
    s1, s2 = lemma_fixed_points(rho, b * normA)
    deriv = (1.0 - rho) / rho if rho > 0 else math.inf
    return ErrorBound(a=a, apriori=apriori, s1_star=s1, s2_star=s2,
                      deriv_bound=deriv, normA=normA, normBinv=b, L=L, n=n,
                      h_tail=float(h_tail))
