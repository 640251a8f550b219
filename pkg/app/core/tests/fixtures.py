"""Models shared by the test suites"""
from functools import lru_cache

import numpy as np

from core.exo import ExoParams, build_exo
from core.growth import GrowthParams, build_growth, normalize_split
from core.model import ModelSpec
from core.pipeline import build_pipeline

# columns (y_next, y, x_next, x, z); rows are the y equation then x
LINEAR_M = np.array([
    [1.0, -1.5, 0.0, -0.2, -0.3],
    [0.0, -0.1, 1.0, -0.5, 0.0],
])
LINEAR_K = np.array([
    [0.5, 0.0, 0.0],
    [0.0, 0.5, 0.1],
    [0.3, 0.2, 1.5],
])


def linear_model():
    def residual(y_next, y, x_next, x, z):
        stacked = np.concatenate([y_next, y, x_next, x, z], axis=-1)
        return stacked @ LINEAR_M.T

    return ModelSpec(
        n_x=1, n_y=1, n_z=1,
        residual=residual,
        lam=np.array([[0.5]]),
        steady_guess=np.array([0.3, -0.2]),
        name='linear',
    )


def quadratic_model():
    """linear_model plus quadratic terms in both equations"""
    linear = linear_model().residual

    def residual(y_next, y, x_next, x, z):
        extra = np.concatenate([0.2 * x * y - 0.1 * z ** 2, 0.1 * x * z],
                               axis=-1)
        return linear(y_next, y, x_next, x, z) + extra

    return ModelSpec(
        n_x=1, n_y=1, n_z=1,
        residual=residual,
        lam=np.array([[0.5]]),
        steady_guess=np.zeros(2),
        form9=True,
        name='quadratic',
    )


def outward_model():
    """x_next = x/2 + 2 x^2 with y = 0 on the stable manifold"""
    def residual(y_next, y, x_next, x, z):
        return np.concatenate([y_next - 2.0 * y,
                               x_next - 0.5 * x - 2.0 * x ** 2], axis=-1)

    return ModelSpec(
        n_x=1, n_y=1, n_z=0,
        residual=residual,
        lam=np.zeros((0, 0)),
        steady_guess=np.zeros(2),
        form9=True,
        name='outward',
    )


@lru_cache(maxsize=None)
def growth_pipeline(alpha=0.36, beta=0.99):
    params = GrowthParams(alpha, beta)
    return params, build_pipeline(build_growth(params),
                                  normalize=normalize_split)


@lru_cache(maxsize=None)
def exo_pipeline(g_uu=0.1, g_uv=0.05):
    return build_pipeline(build_exo(ExoParams(g_uu=g_uu, g_uv=g_uv)))


@lru_cache(maxsize=None)
def linear_pipeline():
    return build_pipeline(linear_model())


def growth_G(params, u, v):
    """G(u, v) of the growth model for the normalized split"""
    a, b, kb = params.alpha, params.beta, params.k_bar
    s = 1.0 / (a * b)
    k0 = u + v
    k1 = a * u + s * v
    k2 = ((1 + a * b) * (kb + k1) ** a
          - a * b * (kb + k0) ** a * (kb + k1) ** (a - 1) - kb)
    linear = -k0 / b + (a + s) * k1
    return (k2 - linear) / (s - a)


@lru_cache(maxsize=None)
def quadratic_pipeline():
    return build_pipeline(quadratic_model())


@lru_cache(maxsize=None)
def outward_pipeline():
    return build_pipeline(outward_model())
