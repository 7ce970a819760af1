"""Continuous and modulated waves in S^1-equivariant delay systems."""

__version__ = "0.1.0"

from .model import (EquivariantModel, GroupGenerator, lang_kobayashi, model_from_config,
                    rotation_generator, stuart_landau)
from .cw import CWPoint, continue_primary, default_seed, enumerate_cws, solve_cw, solve_cw_at
from .cw_spectrum import classify_cw, cw_spectrum, rightmost_roots
from .mw import MWSolution, enumerate_family, reappear_mw, solve_mw
from .mw_spectrum import large_delay_trend, monodromy_multipliers
from .sim import HistorySegment, integrate

__all__ = [
    "EquivariantModel", "GroupGenerator", "lang_kobayashi", "stuart_landau", "rotation_generator",
    "model_from_config", "CWPoint", "solve_cw", "solve_cw_at", "continue_primary", "enumerate_cws",
    "default_seed", "cw_spectrum", "classify_cw", "rightmost_roots", "MWSolution", "solve_mw",
    "reappear_mw", "enumerate_family", "monodromy_multipliers", "large_delay_trend",
    "HistorySegment", "integrate",
]
