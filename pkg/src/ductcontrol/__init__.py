"""Return-method boundary control of 2D ideal MHD in a rectangular duct."""
import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .errors import DuctControlError
from .geometry import (DomainSpec, GridSpec, ReturnProfile, build_domains, build_grid,
                       choose_M, grid_for_spacing, weight_eval, weight_trick_bound)

__all__ = ["DuctControlError", "DomainSpec", "GridSpec", "ReturnProfile", "build_domains",
           "build_grid", "choose_M", "grid_for_spacing", "weight_eval", "weight_trick_bound"]
