"""Random MRI-style distortions and the robustness sweep grids."""
from .engine import DistortionSpec, apply, apply_array, sample_params
from .grids import (
    DEFAULT_PARAMS,
    IDENTITY_PARAMS,
    SEARCH_SPACE,
    Family,
    ParameterSpace,
    SweepGrid,
    enumerate_space,
    format_grids,
    get_grid,
)

__all__ = [
    "DEFAULT_PARAMS",
    "IDENTITY_PARAMS",
    "SEARCH_SPACE",
    "DistortionSpec",
    "Family",
    "ParameterSpace",
    "SweepGrid",
    "apply",
    "apply_array",
    "enumerate_space",
    "format_grids",
    "get_grid",
    "sample_params",
]
