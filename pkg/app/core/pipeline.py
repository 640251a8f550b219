"""Model -> steady state -> first-order form -> split -> transformed system"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

from core.first_order import FirstOrderSystem, build_first_order
from core.model import ModelSpec, SteadyState, find_steady_state
from core.spectral import (
    EPS_UNIT,
    SpectralSplit,
    TransformedSystem,
    build_transformed,
    schur_split,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Pipeline:
    model: ModelSpec
    ss: SteadyState
    first_order: FirstOrderSystem
    split: SpectralSplit
    system: TransformedSystem


def build_pipeline(model, steady_tol=1e-12, eps_unit=EPS_UNIT,
                   normalize: Optional[Callable] = None):
    ss = find_steady_state(model, tol=steady_tol)
    fo = build_first_order(model, ss)
    split = schur_split(fo.K, model.n_z + model.n_x, eps_unit=eps_unit)
    if normalize is not None:
        split = normalize(split)
    system = build_transformed(fo, split)
    logger.info('pipeline for %s: ||A||=%.6g ||B^-1||=%.6g',
                model.name, split.normA, split.normBinv)
    return Pipeline(model=model, ss=ss, first_order=fo, split=split,
                    system=system)
