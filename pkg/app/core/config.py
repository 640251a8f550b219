"""Run configuration for the `asm` command.

Values come from, in increasing precedence, settings.ASM_SETTINGS, an INI
file with the sections [model], [params], [solver], [simulation] and
[output], and command-line flags.
"""
import configparser
import importlib.util
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from django.conf import settings

from core.exceptions import ConfigError
from core.exo import ExoParams, build_exo
from core.growth import GrowthParams, build_growth, normalize_split
from core.model import ModelSpec

BUILTIN_MODELS = ('growth', 'exo_test')
INNER_SOLVERS = ('picard', 'newton')


def _floats(text):
    return tuple(float(p) for p in text.replace(',', ' ').split())


@dataclass(frozen=True)
class RunConfig:
    model: str = 'growth'
    params: dict = field(default_factory=dict)
    order: int = 2
    # None selects the largest verified radius on radius_grid
    radii: Optional[tuple] = None
    radius_grid: tuple = ()
    steady_tol: float = 1e-12
    inner_tol: float = 1e-12
    init_tol: float = 1e-12
    inner_max_iter: int = 200
    inner_solver: str = 'picard'
    sample_count: int = 4096
    T: int = 50
    horizon: int = 20
    type2_iters: int = 4
    x0: Optional[tuple] = None
    x0_scale: float = 1.0
    z0: Optional[tuple] = None
    stochastic: bool = False
    shock_scale: float = 0.01
    truncate: bool = False
    seed: int = 0
    grid: int = 501
    output_dir: str = 'asm_output'

    def validate(self):
        if (self.model not in BUILTIN_MODELS
                and not self.model.endswith('.py')):
            raise ConfigError(f'unknown model {self.model!r}')
        for name in ('steady_tol', 'inner_tol', 'init_tol', 'shock_scale'):
            if not getattr(self, name) > 0:
                raise ConfigError(f'{name} must be positive')
        if self.order < 0:
            raise ConfigError('order must be nonnegative')
        if self.radii is not None and not min(self.radii) > 0:
            raise ConfigError('radii must be positive')
        if self.radii is None and not self.radius_grid:
            raise ConfigError('radius search needs a nonempty radius grid')
        if self.inner_solver not in INNER_SOLVERS:
            raise ConfigError(f'inner_solver must be one of {INNER_SOLVERS}')
        if self.grid < 2:
            raise ConfigError('grid needs at least 2 points')
        if self.horizon < 1:
            raise ConfigError('horizon must be at least 1')
        if self.T < 1:
            raise ConfigError('T must be at least 1')
        if self.inner_max_iter < 1 or self.sample_count < 1:
            raise ConfigError('iteration caps and sample counts must be '
                              'positive')
        return self


def defaults():
    asm = settings.ASM_SETTINGS
    return RunConfig(
        order=int(asm['ORDER']),
        radius_grid=tuple(asm['RADIUS_GRID']),
        steady_tol=float(asm['STEADY_TOL']),
        inner_tol=float(asm['INNER_TOL']),
        init_tol=float(asm['INIT_TOL']),
        inner_max_iter=int(asm['INNER_MAX_ITER']),
        sample_count=int(asm['SAMPLE_COUNT']),
        T=int(asm['T']),
        horizon=int(asm['HORIZON']),
        type2_iters=int(asm['TYPE2_ITERS']),
        seed=int(asm['SEED']),
        grid=int(asm['GRID_POINTS']),
        output_dir=str(asm['OUTPUT_DIR']),
    )


_CASTS = {
    'order': int, 'inner_max_iter': int, 'sample_count': int, 'T': int,
    'horizon': int, 'type2_iters': int, 'seed': int, 'grid': int,
    'steady_tol': float, 'inner_tol': float, 'init_tol': float,
    'x0_scale': float, 'shock_scale': float,
    'radius_grid': _floats, 'x0': _floats, 'z0': _floats,
    'inner_solver': str, 'output_dir': str,
}
_SECTIONS = {
    'solver': ('order', 'radii', 'radius_grid', 'steady_tol', 'inner_tol',
               'init_tol', 'inner_max_iter', 'inner_solver', 'sample_count'),
    'simulation': ('T', 'horizon', 'type2_iters', 'x0', 'x0_scale', 'z0',
                   'stochastic', 'shock_scale', 'truncate', 'seed'),
    'output': ('dir', 'grid'),
}


def _read_file(path):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f'cannot read config {path}: {exc}') from exc

    values = {}
    if parser.has_section('model'):
        name = parser['model'].get('name')
        if name:
            if name.endswith('.py') and not Path(name).is_absolute():
                name = str((Path(path).parent / name).resolve())
            values['model'] = name
    if parser.has_section('params'):
        values['params'] = dict(parser['params'])

    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        body = parser[section]
        unknown = set(body) - set(keys)
        if unknown:
            raise ConfigError(
                f'unknown keys in [{section}]: {", ".join(sorted(unknown))}'
            )
        for key in keys:
            if key not in body:
                continue
            target = 'output_dir' if key == 'dir' else key
            try:
                if key == 'radii':
                    text = body[key].strip()
                    values['radii'] = (
                        None if text == 'auto' else _radii(_floats(text))
                    )
                elif key in ('stochastic', 'truncate'):
                    values[key] = body.getboolean(key)
                else:
                    values[target] = _CASTS[target](body[key])
            except ValueError as exc:
                raise ConfigError(
                    f'bad value for {key} in [{section}]: {body[key]!r}'
                ) from exc
    return values


def _radii(values):
    if len(values) == 1:
        return (values[0], values[0])
    if len(values) != 2:
        raise ValueError('radii takes one or two numbers')
    return values


def load_run_config(path=None, **overrides):
    """Defaults, then the file at `path`, then non-None `overrides`"""
    config = defaults()
    if path:
        config = replace(config, **_read_file(path))
    flags = {k: v for k, v in overrides.items() if v is not None}
    if flags:
        config = replace(config, **flags)
    return config.validate()


def _load_external(path, params):
    spec = importlib.util.spec_from_file_location('asm_external_model', path)
    if spec is None or spec.loader is None:
        raise ConfigError(f'cannot load model file {path}')
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except OSError as exc:
        raise ConfigError(f'cannot load model file {path}: {exc}') from exc
    builder = getattr(module, 'build_model', None)
    if builder is None:
        raise ConfigError(f'{path} does not define build_model(params)')
    model = builder(dict(params))
    if not isinstance(model, ModelSpec):
        raise ConfigError(f'build_model in {path} did not return a ModelSpec')
    return model


def build_model(config):
    """(ModelSpec, split normalizer or None) for a run configuration"""
    if config.model == 'growth':
        params = GrowthParams.from_dict(config.params)
        return build_growth(params), normalize_split
    if config.model == 'exo_test':
        return build_exo(ExoParams.from_dict(config.params)), None
    return _load_external(config.model, config.params), None
