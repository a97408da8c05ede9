from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import InvalidConfig
from ..volumes import Volume
from . import kernels as K
from .grids import DEFAULT_PARAMS, IDENTITY_PARAMS, Family


def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass(frozen=True)
class DistortionSpec:
    """A distortion family, its parameters (defaults filled in) and a seed."""

    family: Family
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        family = Family(self.family)
        unknown = set(self.params) - set(DEFAULT_PARAMS[family])
        if unknown:
            raise InvalidConfig(f"unknown {family.value} parameters: {sorted(unknown)}")
        merged = dict(DEFAULT_PARAMS[family])
        merged.update({k: tuple(v) if isinstance(v, list) else v for k, v in self.params.items()})
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", merged)

    @classmethod
    def identity(cls, family: Family | str, seed: int = 0) -> "DistortionSpec":
        family = Family(family)
        return cls(family, dict(IDENTITY_PARAMS[family]), seed)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "params": {k: _jsonable(v) for k, v in sorted(self.params.items())},
            "seed": int(self.seed),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionSpec":
        try:
            return cls(Family(d["family"]), dict(d.get("params", {})), int(d.get("seed", 0)))
        except (KeyError, ValueError) as exc:
            raise InvalidConfig(f"bad distortion spec: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "DistortionSpec":
        return cls.from_dict(json.loads(text))


def sample_params(spec: DistortionSpec, shape: tuple[int, int, int]) -> dict[str, Any]:
    """Draw the concrete kernel arguments for ``spec`` from its seed."""
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    f = spec.family
    if f is Family.AFFINE:
        return K.sample_affine(rng, p["scales"], p["degrees"], p["translation"])
    if f is Family.ELASTIC:
        return K.sample_elastic(rng, p["num_control_points"], p["max_displacement"], p["locked_borders"])
    if f is Family.MOTION:
        return K.sample_motion(rng, p["degrees"], p["translation"], p["num_transforms"], p.get("axis"))
    if f is Family.GHOST:
        return K.sample_ghost(rng, p["num_ghosts"], p["intensity"], p.get("axis"))
    if f is Family.SPIKE:
        return K.sample_spike(rng, p["num_spikes"], p["intensity"], shape)
    if f is Family.BLUR:
        return K.sample_blur(rng, p["std"])
    if f is Family.BIAS:
        return K.sample_bias(rng, p["coefficients"], p["order"])
    if f is Family.NOISE:
        return K.sample_noise(rng, p["mean"], p["std"], shape)
    if f is Family.GAMMA:
        return K.sample_gamma(rng, p["log_gamma"])
    raise InvalidConfig(f"unhandled family {f}")


def apply_array(spec: DistortionSpec, data: np.ndarray, voxel_size: float = 3.0) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    drawn = sample_params(spec, data.shape)
    f = spec.family
    if f is Family.AFFINE:
        return K.affine(data, voxel_size=voxel_size, **drawn)
    if f is Family.ELASTIC:
        return K.elastic(data, drawn["coarse"], voxel_size)
    if f is Family.MOTION:
        return K.motion(data, voxel_size=voxel_size, **drawn)
    if f is Family.GHOST:
        return K.ghost(data, **drawn)
    if f is Family.SPIKE:
        return K.spike(data, **drawn)
    if f is Family.BLUR:
        return K.blur(data, drawn["std"], voxel_size)
    if f is Family.BIAS:
        return K.bias(data, drawn["coefficients"])
    if f is Family.NOISE:
        return K.noise(data, drawn["noise"])
    if f is Family.GAMMA:
        return K.gamma(data, drawn["log_gamma"])
    raise InvalidConfig(f"unhandled family {f}")


def apply(spec: DistortionSpec, v: Volume) -> Volume:
    """Distort a copy of ``v``; the input is never modified."""
    return v.with_data(apply_array(spec, v.data, v.voxel_size_mm))
