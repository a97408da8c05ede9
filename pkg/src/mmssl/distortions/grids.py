"""Distortion families, their default parameters and the sweep grids."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import InvalidRange


class Family(str, enum.Enum):
    AFFINE = "affine"
    ELASTIC = "elastic"
    MOTION = "motion"
    GHOST = "ghost"
    SPIKE = "spike"
    BLUR = "blur"
    BIAS = "bias"
    NOISE = "noise"
    GAMMA = "gamma"


@dataclass(frozen=True)
class ParameterSpace:
    left: float
    right: float
    n_steps: int
    data_type: type = float
    eps: float = 10e-8

    def __post_init__(self):
        if self.data_type not in (int, float):
            raise InvalidRange(f"data_type must be int or float, got {self.data_type!r}")
        if not self.right > self.left:
            raise InvalidRange(f"right ({self.right}) must exceed left ({self.left})")
        if self.n_steps < 1:
            raise InvalidRange("n_steps must be positive")

    def enumerate(self) -> list:
        # Rounding happens before the cast, so the int cast truncates e.g. 1.88 -> 1;
        # duplicates produced this way are kept on purpose.
        step = (self.right - self.left) / self.n_steps
        values = np.round(np.arange(self.left, self.right + self.eps, step), 2)
        return values.astype(self.data_type).tolist()


def enumerate_space(ps: ParameterSpace) -> list:
    return ps.enumerate()


# Values not listed fall back to the reference transform library's defaults.
DEFAULT_PARAMS: dict[Family, dict[str, Any]] = {
    Family.AFFINE: {"scales": (1.0, 1.0), "degrees": (0.0, 0.0), "translation": (0.0, 0.0)},
    Family.ELASTIC: {"num_control_points": 7, "max_displacement": 7.5, "locked_borders": 2},
    Family.MOTION: {"degrees": (0.0, 0.0), "translation": (0.0, 0.0), "num_transforms": 1, "axis": None},
    Family.GHOST: {"num_ghosts": (1, 1), "intensity": (0.5, 0.5), "axis": None},
    Family.SPIKE: {"num_spikes": (1, 1), "intensity": (0.5, 0.5)},
    Family.BLUR: {"std": (0.25, 0.25)},
    Family.BIAS: {"coefficients": (0.5, 0.5), "order": 3},
    Family.NOISE: {"mean": (0.0, 0.0), "std": (0.25, 0.25)},
    Family.GAMMA: {"log_gamma": (-0.3, 0.3)},
}

# Parameter values at which each family leaves the input unchanged.
IDENTITY_PARAMS: dict[Family, dict[str, Any]] = {
    Family.AFFINE: {},
    Family.ELASTIC: {"max_displacement": 0.0},
    Family.MOTION: {},
    Family.GHOST: {"intensity": (0.0, 0.0)},
    Family.SPIKE: {"intensity": (0.0, 0.0)},
    Family.BLUR: {"std": (0.0, 0.0)},
    Family.BIAS: {"coefficients": (0.0, 0.0)},
    Family.NOISE: {"mean": (0.0, 0.0), "std": (0.0, 0.0)},
    Family.GAMMA: {"log_gamma": (0.0, 0.0)},
}

# Parameters given as a scalar rather than a (min, max) interval.
SCALAR_PARAMS = {
    (Family.ELASTIC, "num_control_points"),
    (Family.ELASTIC, "max_displacement"),
    (Family.ELASTIC, "locked_borders"),
    (Family.MOTION, "num_transforms"),
    (Family.BIAS, "order"),
    (Family.GHOST, "axis"),
    (Family.MOTION, "axis"),
}


@dataclass(frozen=True)
class SweepGrid:
    family: Family
    swept_param: str
    space: ParameterSpace
    fixed_params: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"{self.family.value}.{self.swept_param}"

    @property
    def values(self) -> list:
        return self.space.enumerate()

    def params_at(self, value) -> dict:
        """Full parameter dict with the swept parameter pinned to ``value``."""
        params = dict(DEFAULT_PARAMS[self.family])
        params.update(self.fixed_params)
        if (self.family, self.swept_param) in SCALAR_PARAMS:
            params[self.swept_param] = value
        else:
            params[self.swept_param] = (value, value)
        return params


SEARCH_SPACE: tuple[SweepGrid, ...] = (
    SweepGrid(Family.AFFINE, "scales", ParameterSpace(0.5, 2.5, 10, float)),
    SweepGrid(Family.AFFINE, "degrees", ParameterSpace(-90, 90, 10, int)),
    SweepGrid(Family.AFFINE, "translation", ParameterSpace(-45, 45, 10, int)),
    SweepGrid(Family.ELASTIC, "num_control_points", ParameterSpace(5, 16, 10, int)),
    SweepGrid(Family.ELASTIC, "max_displacement", ParameterSpace(1, 32, 10, float)),
    SweepGrid(Family.MOTION, "degrees", ParameterSpace(-90, 90, 10, int)),
    SweepGrid(Family.MOTION, "translation", ParameterSpace(-9, 9, 10, int)),
    SweepGrid(Family.GHOST, "intensity", ParameterSpace(0.1, 0.9, 10, float)),
    SweepGrid(Family.SPIKE, "intensity", ParameterSpace(0, 2, 10, float)),
    SweepGrid(Family.BLUR, "std", ParameterSpace(1, 10, 10, float)),
    SweepGrid(Family.BIAS, "coefficients", ParameterSpace(0.1, 2, 10, float)),
    SweepGrid(Family.BIAS, "order", ParameterSpace(1, 8, 8, int)),
    SweepGrid(Family.NOISE, "mean", ParameterSpace(-2.0, 2.0, 10, float)),
    SweepGrid(Family.NOISE, "std", ParameterSpace(0, 2.0, 10, float)),
    SweepGrid(Family.GAMMA, "log_gamma", ParameterSpace(-0.9, 0.9, 10, float)),
)


def get_grid(name: str) -> SweepGrid:
    for g in SEARCH_SPACE:
        if g.name == name:
            return g
    raise KeyError(f"unknown grid {name!r}; known: {[g.name for g in SEARCH_SPACE]}")


def format_grids(grids=SEARCH_SPACE) -> str:
    """One line per grid: ``family.param: v0 v1 ...``."""
    return "".join(f"{g.name}: {' '.join(repr(v) for v in g.values)}\n" for g in grids)
