"""Numeric kernels for the nine distortion families.

Each family is split into a parameter draw (``sample_*``, consumes an RNG)
and a deterministic core that takes explicit parameters. Spatial kernels use
trilinear interpolation with zero padding. Spectral kernels (motion, ghost,
spike) work on the full complex 3D spectrum and return the magnitude.

All cores accept and return float64 arrays of cubic shape; translations and
displacements are in mm and converted with ``voxel_size``.
"""
from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np
from scipy import ndimage

from ..errors import ConstantVolume, NonPositiveScale, TooFewControlPoints


def _interval(value) -> tuple[float, float]:
    if np.isscalar(value):
        return float(value), float(value)
    lo, hi = value
    if hi < lo:
        raise ValueError(f"interval {value!r} has max < min")
    return float(lo), float(hi)


def _int_interval(value) -> tuple[int, int]:
    lo, hi = _interval(value)
    return int(lo), int(hi)


def _uniform(rng: np.random.Generator, value, size=None):
    lo, hi = _interval(value)
    return rng.uniform(lo, hi, size=size)


# --- affine ---------------------------------------------------------------

def rotation_matrix(degrees: Sequence[float]) -> np.ndarray:
    """Right-handed rotations about axes 0, 1, 2 applied in that order."""
    ax, ay, az = np.deg2rad(np.asarray(degrees, dtype=np.float64))
    cx, sx, cy, sy, cz, sz = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay), np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def affine_resample(data: np.ndarray, matrix: np.ndarray, translation_vox: Sequence[float]) -> np.ndarray:
    """Move content by ``x -> matrix (x - c) + c + t`` about the grid center c."""
    center = (np.asarray(data.shape, dtype=np.float64) - 1.0) / 2.0
    t = np.asarray(translation_vox, dtype=np.float64)
    # Rounding strips trig round-off so right-angle rotations land exactly on the grid.
    inv = np.round(np.linalg.inv(matrix), 12)
    offset = np.round(center - inv @ (center + t), 9)
    # Exact identity short-circuit keeps the identity point free of resampling round-off.
    if np.allclose(inv, np.eye(3), atol=0, rtol=0) and not np.any(offset):
        return data.astype(np.float64, copy=True)
    return ndimage.affine_transform(data, inv, offset=offset, order=1, mode="constant", cval=0.0)


def sample_affine(rng, scales, degrees, translation) -> dict:
    s = _uniform(rng, scales, 3)
    if np.any(s <= 0):
        raise NonPositiveScale(f"scales must be positive, drew {s}")
    return {
        "scales": s,
        "degrees": _uniform(rng, degrees, 3),
        "translation": _uniform(rng, translation, 3),
    }


def affine(data, scales, degrees, translation, voxel_size=3.0) -> np.ndarray:
    scales = np.asarray(scales, dtype=np.float64)
    if np.any(scales <= 0):
        raise NonPositiveScale(f"scales must be positive, got {scales}")
    m = rotation_matrix(degrees) @ np.diag(scales)
    return affine_resample(np.asarray(data, dtype=np.float64), m, np.asarray(translation) / voxel_size)


# --- elastic --------------------------------------------------------------

def cubic_bspline(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t < 1
    far = (t >= 1) & (t < 2)
    out[near] = 2.0 / 3.0 - t[near] ** 2 + 0.5 * t[near] ** 3
    out[far] = (2.0 - t[far]) ** 3 / 6.0
    return out


def bspline_basis(n_out: int, n_ctrl: int) -> np.ndarray:
    """(n_out, n_ctrl) weights of a cubic B-spline whose knots span the grid.

    Coefficients beyond the control grid are clamped to the nearest edge
    coefficient, so rows sum to one.
    """
    u = np.linspace(0.0, n_ctrl - 1.0, n_out)
    basis = np.zeros((n_out, n_ctrl))
    for j in range(-2, n_ctrl + 2):
        basis[:, min(max(j, 0), n_ctrl - 1)] += cubic_bspline(u - j)
    return basis


def bspline_field(coarse: np.ndarray, n_out: int) -> np.ndarray:
    """Dense (3, n, n, n) field from (3, m, m, m) control displacements."""
    m = coarse.shape[1]
    b = bspline_basis(n_out, m)
    return np.einsum("ai,bj,ck,dijk->dabc", b, b, b, coarse, optimize=True)


def sample_elastic(rng, num_control_points, max_displacement, locked_borders=2) -> dict:
    n = int(num_control_points)
    if n < 4:
        raise TooFewControlPoints(f"num_control_points must be >= 4, got {n}")
    lo, hi = _interval(max_displacement)
    bound = rng.uniform(lo, hi)
    coarse = rng.uniform(-bound, bound, size=(3, n, n, n))
    lb = int(locked_borders)
    if lb > 0:
        for axis in (1, 2, 3):
            idx = [slice(None)] * 4
            idx[axis] = np.r_[0:min(lb, n), max(n - lb, 0):n]
            coarse[tuple(idx)] = 0.0
    return {"coarse": coarse}


def elastic(data, coarse, voxel_size=3.0) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    coarse = np.asarray(coarse, dtype=np.float64)
    if coarse.shape[1] < 4:
        raise TooFewControlPoints("control grid must be at least 4 per axis")
    if not np.any(coarse):
        return data.copy()
    disp = bspline_field(coarse, data.shape[0]) / voxel_size
    grid = np.indices(data.shape, dtype=np.float64)
    return ndimage.map_coordinates(data, grid + disp, order=1, mode="constant", cval=0.0)


# --- spectral families ----------------------------------------------------

def fft3(x: np.ndarray) -> np.ndarray:
    return np.fft.fftn(x)


def ifft3_magnitude(spectrum: np.ndarray) -> np.ndarray:
    return np.abs(np.fft.ifftn(spectrum))


def frequency_index(n: int) -> np.ndarray:
    """Signed integer frequency of each FFT bin (0, 1, ..., -1)."""
    return np.rint(np.fft.fftfreq(n) * n).astype(int)


def motion_bands(n: int, times: Sequence[float]) -> np.ndarray:
    """Band id (0..T) per bin along the phase axis, in centered frequency order."""
    edges = np.clip(np.floor(np.asarray(times) * n).astype(int), 0, n)
    centered = np.searchsorted(edges, np.arange(n), side="right")
    # Map from centered order (-n/2 .. n/2-1) back to FFT bin order.
    return np.fft.ifftshift(centered)


def compose_bands(spectra: Sequence[np.ndarray], times: Sequence[float], axis: int) -> np.ndarray:
    """Fill each k-space band along ``axis`` from the matching spectrum."""
    n = spectra[0].shape[axis]
    bands = motion_bands(n, times)
    out = np.empty_like(spectra[0])
    for b, spec in enumerate(spectra):
        sel = [slice(None)] * 3
        sel[axis] = bands == b
        out[tuple(sel)] = spec[tuple(sel)]
    return out


def sample_motion(rng, degrees, translation, num_transforms=1, axis=None) -> dict:
    t = int(num_transforms)
    if t < 1:
        raise ValueError("num_transforms must be >= 1")
    step = 1.0 / (t + 1)
    times = np.arange(1, t + 1) * step + rng.uniform(-step / 4, step / 4, size=t)
    return {
        "degrees": [_uniform(rng, degrees, 3) for _ in range(t)],
        "translation": [_uniform(rng, translation, 3) for _ in range(t)],
        "times": np.sort(times),
        "axis": int(rng.integers(3)) if axis is None else int(axis),
    }


def motion(data, degrees, translation, times, axis, voxel_size=3.0) -> np.ndarray:
    """k-space composition of the input and its rigidly moved copies."""
    data = np.asarray(data, dtype=np.float64)
    moved = [affine(data, (1.0, 1.0, 1.0), d, tr, voxel_size) for d, tr in zip(degrees, translation)]
    return motion_from_volumes(data, moved, times, axis)


def motion_from_volumes(data, moved, times, axis) -> np.ndarray:
    spectra = [fft3(data)] + [fft3(m) for m in moved]
    return ifft3_magnitude(compose_bands(spectra, times, axis))


def ghost_plane_mask(n: int, num_ghosts: int) -> np.ndarray:
    """Phase-encoding planes to attenuate: every k-th frequency, DC excluded."""
    f = frequency_index(n)
    return (f % num_ghosts == 0) & (f != 0)


def sample_ghost(rng, num_ghosts, intensity, axis=None) -> dict:
    lo, hi = _int_interval(num_ghosts)
    return {
        "num_ghosts": int(rng.integers(lo, hi + 1)),
        "intensity": float(_uniform(rng, intensity)),
        "axis": int(rng.integers(3)) if axis is None else int(axis),
    }


def ghost(data, num_ghosts, intensity, axis) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if num_ghosts <= 0 or intensity == 0:
        return np.abs(data)
    spec = fft3(data)
    sel = [slice(None)] * 3
    sel[axis] = ghost_plane_mask(data.shape[axis], num_ghosts)
    spec[tuple(sel)] *= 1.0 - intensity
    return ifft3_magnitude(spec)


def sample_spike(rng, num_spikes, intensity, shape) -> dict:
    lo, hi = _int_interval(num_spikes)
    k = int(rng.integers(lo, hi + 1))
    return {
        "positions": rng.integers(0, shape[0], size=(k, 3)),
        "intensity": float(_uniform(rng, intensity)),
    }


def spike(data, positions, intensity) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if intensity == 0 or len(positions) == 0:
        return np.abs(data)
    spec = fft3(data)
    peak = np.abs(spec).max()
    for p in np.asarray(positions, dtype=int):
        spec[tuple(p)] += intensity * peak
    return ifft3_magnitude(spec)


# --- intensity / smoothing -------------------------------------------------

def sample_blur(rng, std) -> dict:
    return {"std": _uniform(rng, std, 3)}


def blur(data, std, voxel_size=3.0) -> np.ndarray:
    sigma = np.asarray(std, dtype=np.float64) / voxel_size
    data = np.asarray(data, dtype=np.float64)
    if not np.any(sigma):
        return data.copy()
    return ndimage.gaussian_filter(data, sigma=sigma, mode="reflect", truncate=4.0)


def monomials(order: int) -> list[tuple[int, int, int]]:
    return [
        (i, j, k)
        for i, j, k in itertools.product(range(order + 1), repeat=3)
        if i + j + k <= order
    ]


def sample_bias(rng, coefficients, order) -> dict:
    order = int(order)
    if order < 1:
        raise ValueError("order must be >= 1")
    bound = abs(float(_uniform(rng, coefficients)))
    terms = monomials(order)
    return {"coefficients": dict(zip(terms, rng.uniform(-bound, bound, size=len(terms))))}


def bias_log_field(n: int, coefficients: dict) -> np.ndarray:
    x = np.linspace(-1.0, 1.0, n)
    powers = {}
    field = np.zeros((n, n, n))
    for (i, j, k), c in coefficients.items():
        if c == 0:
            continue
        for p in (i, j, k):
            if p not in powers:
                powers[p] = x ** p
        field += c * powers[i][:, None, None] * powers[j][None, :, None] * powers[k][None, None, :]
    return field


def bias(data, coefficients) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    return data * np.exp(bias_log_field(data.shape[0], coefficients))


def sample_noise(rng, mean, std, shape) -> dict:
    mu = float(_uniform(rng, mean))
    sd = float(_uniform(rng, std))
    if sd < 0:
        raise ValueError("noise std must be non-negative")
    return {"noise": rng.normal(mu, sd, size=shape)}


def noise(data, noise) -> np.ndarray:
    return np.asarray(data, dtype=np.float64) + noise


def sample_gamma(rng, log_gamma) -> dict:
    return {"log_gamma": float(_uniform(rng, log_gamma))}


def gamma(data, log_gamma) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    lo, hi = data.min(), data.max()
    if hi == lo:
        raise ConstantVolume("gamma needs a non-constant volume")
    t = (data - lo) / (hi - lo)
    out = lo + (hi - lo) * t ** np.exp(log_gamma)
    # lo + (hi - lo) need not round back to hi
    out[data == hi] = hi
    return out
