"""Regenerates grids.txt from a literal transcription of the reference grid code.

Kept independent of the package on purpose: run ``python3 transcribe_grids.py > grids.txt``.
"""
import numpy as np


class ParameterSpace():
    def __init__(self, left, right, n_steps, data_type, eps=10e-8):
        step = (right - left) / n_steps
        self.range = np.round(np.arange(left, right + eps, step), 2)
        self.range = self.range.astype(data_type)


search_space = {
    "affine": {
        "scales": ParameterSpace(0.5, 2.5, 10, data_type=float),
        "degrees": ParameterSpace(-90, 90, 10, data_type=int),
        "translation": ParameterSpace(-45, 45, 10, data_type=int),
    },
    "elastic": {
        "num_control_points": ParameterSpace(5, 16, 10, data_type=int),
        "max_displacement": ParameterSpace(1, 32, 10, data_type=float),
    },
    "motion": {
        "degrees": ParameterSpace(-90, 90, 10, data_type=int),
        "translation": ParameterSpace(-9, 9, 10, data_type=int),
    },
    "ghost": {"intensity": ParameterSpace(0.1, 0.9, 10, data_type=float)},
    "spike": {"intensity": ParameterSpace(0, 2, 10, data_type=float)},
    "blur": {"std": ParameterSpace(1, 10, 10, data_type=float)},
    "bias": {
        "coefficients": ParameterSpace(0.1, 2, 10, data_type=float),
        "order": ParameterSpace(1, 8, 8, data_type=int),
    },
    "noise": {
        "mean": ParameterSpace(-2., 2., 10, data_type=float),
        "std": ParameterSpace(0, 2., 10, data_type=float),
    },
    "gamma": {"log_gamma": ParameterSpace(-0.9, 0.9, 10, data_type=float)},
}

if __name__ == "__main__":
    for family, space in search_space.items():
        for name, ps in space.items():
            print(f"{family}.{name}: " + " ".join(repr(v) for v in ps.range.tolist()))
