"""Exogenous-state test model.

One exogenous state z with z' = a z and one control y with

    y_{t+1} = b y_t + g_uu z_t^2 + g_uv z_t y_t.

The pipeline maps it to u = z, v = y with A = a, B = b, F = 0 and
G(u, v) = g_uu u^2 + g_uv u v, which is what the extended-path solver
needs.
"""
from dataclasses import dataclass, fields

import numpy as np

from core.exceptions import ConfigError
from core.model import Jacobians, ModelSpec


@dataclass(frozen=True)
class ExoParams:
    a: float = 0.5
    b: float = 2.0
    g_uu: float = 0.1
    g_uv: float = 0.05

    def __post_init__(self):
        if not abs(self.a) < 1:
            raise ConfigError(f'|a| must be below one, got {self.a}')
        if not abs(self.b) > 1:
            raise ConfigError(f'|b| must exceed one, got {self.b}')

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
    def linear(self):
        return self.g_uu == 0 and self.g_uv == 0


def build_exo(params):
    b, g_uu, g_uv = params.b, params.g_uu, params.g_uv

    def residual(y_next, y, x_next, x, z):
        return y_next - b * y - g_uu * z ** 2 - g_uv * z * y

    def jacobians(ss):
        return Jacobians(
            f1=np.eye(1),
            f2=np.array([[-b]]),
            f3=np.zeros((1, 0)),
            f4=np.zeros((1, 0)),
            f5=np.zeros((1, 1)),
        )

    return ModelSpec(
        n_x=0, n_y=1, n_z=1,
        residual=residual,
        lam=np.array([[params.a]]),
        steady_guess=np.zeros(1),
        jacobians=jacobians,
        form9=True,
        name='exo_test',
        params={'a': params.a, 'b': b, 'g_uu': g_uu, 'g_uv': g_uv},
    )
