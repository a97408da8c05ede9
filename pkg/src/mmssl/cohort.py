"""Synthetic paired T1/fALFF-like cohort with a diagnosis signal.

Each subject is a smooth ellipsoidal "brain" with a darker cortical band and
a central low-intensity "ventricle". AD subjects get enlarged ventricles and
a dimmer cortical band. The fALFF-like volume is a blurred nonlinear function
of the same anatomy buried in heavy voxel noise, so it is the harder modality.
"""
from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidConfig
from .volumes import VOLUME_SHAPE, Label, Modality, Population, ScanPair, SubjectRecord, Volume, _largest_remainder

LABEL_ORDER = (Label.HC, Label.AD, Label.OTHER)

BRAIN_SEMI_AXES = (22.0, 26.0, 20.0)
VENTRICLE_SEMI_AXES = (6.0, 9.0, 5.0)
CORTEX_THICKNESS = 3.5
WM_INTENSITY = 1.0
GM_INTENSITY = 0.65
CSF_INTENSITY = 0.25
T1_NOISE_SIGMA = 0.03


@dataclass(frozen=True)
class CohortConfig:
    n_in_dist: int = 826
    n_shift: int = 134
    label_mix: tuple[float, float, float] = (0.70, 0.15, 0.15)
    shift_label_mix: tuple[float, float, float] = (100 / 134, 34 / 134, 0.0)
    scans_per_subject: tuple[int, int] = (1, 8)
    signal_strength: float = 0.5
    falff_noise_sigma: float = 0.5
    shift_intensity_offset: float = 0.1
    shift_anatomy_scale: float = 1.05
    seed: int = 0

    def __post_init__(self):
        for name in ("label_mix", "shift_label_mix", "scans_per_subject"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        if self.n_in_dist < 0 or self.n_shift < 0:
            raise InvalidConfig("subject counts must be non-negative")
        for name in ("label_mix", "shift_label_mix"):
            mix = getattr(self, name)
            if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-6:
                raise InvalidConfig(f"{name} must be three non-negative proportions summing to 1")
        lo, hi = self.scans_per_subject
        if lo < 1 or hi < lo:
            raise InvalidConfig("scans_per_subject must be a range with 1 <= min <= max")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise InvalidConfig("signal_strength must lie in [0, 1]")
        if self.falff_noise_sigma < 0:
            raise InvalidConfig("falff_noise_sigma must be non-negative")
        if self.shift_anatomy_scale <= 0:
            raise InvalidConfig("shift_anatomy_scale must be positive")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CohortConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown cohort config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class SubjectAnatomy:
    center: tuple[float, float, float]
    brain_axes: tuple[float, float, float]
    ventricle_axes: tuple[float, float, float]
    wm: float
    gm: float
    texture_seed: int
    scan_seeds: tuple[int, ...] = field(default=())


@functools.lru_cache(maxsize=1)
def _grid() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    axes = [np.arange(n, dtype=np.float64) for n in VOLUME_SHAPE]
    return tuple(np.meshgrid(*axes, indexing="ij"))


def _ellipsoid_radius(center, axes) -> np.ndarray:
    gx, gy, gz = _grid()
    return np.sqrt(
        ((gx - center[0]) / axes[0]) ** 2 + ((gy - center[1]) / axes[1]) ** 2 + ((gz - center[2]) / axes[2]) ** 2
    )


def draw_anatomy(rng: np.random.Generator, label: Label, population: Population,
                 cfg: CohortConfig, n_scans: int) -> SubjectAnatomy:
    scale = cfg.shift_anatomy_scale if population is Population.SHIFT else 1.0
    center = 31.5 + rng.normal(0.0, 0.5, size=3)
    brain = np.asarray(BRAIN_SEMI_AXES) * (1.0 + rng.normal(0.0, 0.03)) * scale
    vent = np.asarray(VENTRICLE_SEMI_AXES) * (1.0 + rng.normal(0.0, 0.05)) * scale
    wm = WM_INTENSITY * (1.0 + rng.normal(0.0, 0.03))
    gm = GM_INTENSITY * (1.0 + rng.normal(0.0, 0.03))
    if label is Label.AD:
        vent = vent * (1.0 + cfg.signal_strength)
        gm = gm * (1.0 - cfg.signal_strength / 2.0)
    texture_seed = int(rng.integers(2**31))
    scan_seeds = tuple(int(s) for s in rng.integers(2**31, size=n_scans))
    return SubjectAnatomy(tuple(center), tuple(brain), tuple(vent), float(wm), float(gm), texture_seed, scan_seeds)


def render_clean_t1(anat: SubjectAnatomy, jitter: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """Noise-free T1-like intensities for one scan of a subject."""
    center = np.asarray(anat.center) + np.asarray(jitter)
    r_brain = _ellipsoid_radius(center, anat.brain_axes)
    r_vent = _ellipsoid_radius(center, anat.ventricle_axes)
    inner = 1.0 - CORTEX_THICKNESS / min(anat.brain_axes)
    img = np.zeros(VOLUME_SHAPE)
    img[r_brain <= 1.0] = anat.gm
    img[r_brain <= inner] = anat.wm
    img[r_vent <= 1.0] = CSF_INTENSITY
    texture = ndimage.gaussian_filter(np.random.default_rng(anat.texture_seed).normal(size=VOLUME_SHAPE), 3.0)
    texture *= 0.04 / max(texture.std(), 1e-12)
    img = img + texture * (r_brain <= 1.0)
    return ndimage.gaussian_filter(img, 1.0)


def falff_structure(clean_t1: np.ndarray) -> np.ndarray:
    """Noise-free fALFF-like map derived from T1 anatomy."""
    return ndimage.gaussian_filter(np.clip(clean_t1, 0.0, None) ** 2, 2.0)


def render_scan(anat: SubjectAnatomy, scan_index: int, population: Population, cfg: CohortConfig) -> ScanPair:
    rng = np.random.default_rng(anat.scan_seeds[scan_index])
    jitter = rng.normal(0.0, 0.25, size=3)
    gain = 1.0 + rng.normal(0.0, 0.02)
    clean = render_clean_t1(anat, jitter) * gain
    t1 = np.abs(clean + rng.normal(0.0, T1_NOISE_SIGMA, size=VOLUME_SHAPE))
    falff = np.abs(falff_structure(clean) + rng.normal(0.0, cfg.falff_noise_sigma, size=VOLUME_SHAPE))
    if population is Population.SHIFT:
        t1 = t1 + cfg.shift_intensity_offset
        falff = falff + cfg.shift_intensity_offset
    return ScanPair(Volume(t1, Modality.T1), Volume(falff, Modality.FALFF))


def _subject_rng(cfg: CohortConfig, population: Population, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 0 if population is Population.IN_DIST else 1, index])


def _plan(cfg: CohortConfig) -> list[tuple[str, Label, Population, int]]:
    plan = []
    master = np.random.default_rng([cfg.seed, 2])
    for population, n, mix, prefix in (
        (Population.IN_DIST, cfg.n_in_dist, cfg.label_mix, "sub"),
        (Population.SHIFT, cfg.n_shift, cfg.shift_label_mix, "shf"),
    ):
        if n == 0:
            continue
        counts = _largest_remainder(n, mix)
        labels = [lab for lab, c in zip(LABEL_ORDER, counts) for _ in range(c)]
        labels = [labels[i] for i in master.permutation(n)]
        for i, lab in enumerate(labels):
            plan.append((f"{prefix}{i:04d}", lab, population, i))
    return plan


def generate_subject(cfg: CohortConfig, subject_id: str, label: Label, population: Population,
                     index: int) -> SubjectRecord:
    rng = _subject_rng(cfg, population, index)
    lo, hi = cfg.scans_per_subject
    n_scans = int(rng.integers(lo, hi + 1))
    anat = draw_anatomy(rng, label, population, cfg, n_scans)
    scans = tuple(render_scan(anat, i, population, cfg) for i in range(n_scans))
    return SubjectRecord(subject_id, label, population, scans)


def generate_cohort(cfg: CohortConfig, workers: int = 1) -> list[SubjectRecord]:
    cfg.validate()
    plan = _plan(cfg)
    make = lambda p: generate_subject(cfg, *p)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(make, plan))
    return [make(p) for p in plan]


def cohort_summary(cohort: Sequence[SubjectRecord]) -> dict:
    counts = {pop.value: {lab.value: 0 for lab in LABEL_ORDER} for pop in Population}
    n_pairs = 0
    for s in cohort:
        counts[s.population.value][s.label.value] += 1
        n_pairs += len(s.scans)
    return {
        "counts": counts,
        "n_subjects": len(cohort),
        "n_pairs": n_pairs,
    }
