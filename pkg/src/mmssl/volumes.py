"""Volume data model, intensity normalization and subject-level splits."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConstantVolume, DegenerateHistogram, InvalidConfig, ShapeMismatch, TooFewSubjects

VOLUME_SHAPE = (64, 64, 64)
LANDMARK_PERCENTILES = (1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 99.0)
HOLDOUT = "HOLDOUT"
SHIFT = "SHIFT"


class Modality(str, enum.Enum):
    T1 = "T1"
    FALFF = "FALFF"


class Label(str, enum.Enum):
    HC = "HC"
    AD = "AD"
    OTHER = "OTHER"


class Population(str, enum.Enum):
    IN_DIST = "IN_DIST"
    SHIFT = "SHIFT"


class NormOrder(str, enum.Enum):
    HIST_THEN_Z = "hist_then_z"
    Z_THEN_HIST = "z_then_hist"


@dataclass(frozen=True, eq=False)
class Volume:
    """A cubic scalar grid tagged with its modality.

    ``data`` is stored as a read-only float32 array indexed ``[x, y, z]``.
    Production volumes are 64^3; smaller cubic grids are accepted so the
    spectral kernels can be checked against dense oracles.
    """

    data: np.ndarray
    modality: Modality
    voxel_size_mm: float = 3.0

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 3 or len(set(arr.shape)) != 1:
            raise ShapeMismatch(f"volume must be a cubic 3D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume contains non-finite values")
        if self.voxel_size_mm <= 0:
            raise ValueError("voxel_size_mm must be positive")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.modality, self.voxel_size_mm)


@dataclass(frozen=True)
class ScanPair:
    t1: Volume
    falff: Volume

    def __iter__(self) -> Iterator[Volume]:
        return iter((self.t1, self.falff))

    def get(self, modality: Modality) -> Volume:
        return self.t1 if Modality(modality) is Modality.T1 else self.falff


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    label: Label
    population: Population
    scans: tuple[ScanPair, ...]

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "population", Population(self.population))
        scans = tuple(ScanPair(*s) if not isinstance(s, ScanPair) else s for s in self.scans)
        if not scans:
            raise InvalidConfig(f"subject {self.subject_id} has no scans")
        for pair in scans:
            if pair.t1.modality is not Modality.T1 or pair.falff.modality is not Modality.FALFF:
                raise InvalidConfig(f"subject {self.subject_id}: scan pair must be (T1, FALFF)")
        object.__setattr__(self, "scans", scans)


@dataclass(frozen=True)
class NormalizationStats:
    modality: Modality
    histogram_landmarks: tuple[float, ...]
    landmark_percentiles: tuple[float, ...] = LANDMARK_PERCENTILES

    def __post_init__(self):
        lm = np.asarray(self.histogram_landmarks, dtype=np.float64)
        if len(lm) != len(self.landmark_percentiles):
            raise InvalidConfig("landmarks and percentiles differ in length")
        if np.any(np.diff(lm) <= 0):
            raise DegenerateHistogram("landmarks must be strictly increasing")
        object.__setattr__(self, "modality", Modality(self.modality))

    def to_dict(self) -> dict:
        return {
            "modality": self.modality.value,
            "histogram_landmarks": [float(x) for x in self.histogram_landmarks],
            "landmark_percentiles": [float(x) for x in self.landmark_percentiles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            Modality(d["modality"]),
            tuple(d["histogram_landmarks"]),
            tuple(d["landmark_percentiles"]),
        )


@dataclass(frozen=True)
class SplitAssignment:
    fold_count: int
    fold_of_subject: dict[str, int | str] = field(default_factory=dict)
    stratify_key: str = "label"

    def subjects_in(self, fold: int | str) -> list[str]:
        return sorted(s for s, f in self.fold_of_subject.items() if f == fold)

    def training_subjects(self, exclude_fold: int | None = None) -> list[str]:
        return sorted(
            s
            for s, f in self.fold_of_subject.items()
            if isinstance(f, int) and f != exclude_fold
        )

    def to_dict(self) -> dict:
        return {
            "fold_count": self.fold_count,
            "stratify_key": self.stratify_key,
            "fold_of_subject": dict(sorted(self.fold_of_subject.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(d["fold_count"], dict(d["fold_of_subject"]), d.get("stratify_key", "label"))


def znormalize(v: Volume) -> Volume:
    x = v.data.astype(np.float64)
    std = x.std()
    if not std > 0:
        raise ConstantVolume("cannot z-normalize a constant volume")
    return v.with_data((x - x.mean()) / std)


def _volume_percentiles(v: Volume, percentiles: Sequence[float]) -> np.ndarray:
    x = v.data.astype(np.float64)
    if x.max() == x.min():
        raise DegenerateHistogram("volume is constant")
    return np.percentile(x, percentiles)


def fit_histogram_standardization(
    training_volumes: Sequence[Volume],
    percentiles: Sequence[float] = LANDMARK_PERCENTILES,
) -> NormalizationStats:
    """Average per-volume intensity percentiles into a landmark template."""
    if not training_volumes:
        raise InvalidConfig("need at least one training volume")
    modalities = {v.modality for v in training_volumes}
    if len(modalities) != 1:
        raise InvalidConfig(f"mixed modalities in training volumes: {sorted(m.value for m in modalities)}")
    per_volume = np.stack([_volume_percentiles(v, percentiles) for v in training_volumes])
    landmarks = per_volume.mean(axis=0)
    return NormalizationStats(modalities.pop(), tuple(float(x) for x in landmarks), tuple(percentiles))


def _strictly_increasing(xp: np.ndarray) -> np.ndarray:
    # Tied percentiles (e.g. zero padding) are nudged apart so the map stays a function.
    out = xp.astype(np.float64).copy()
    scale = max(abs(out[-1] - out[0]), 1.0)
    for i in range(1, len(out)):
        if out[i] <= out[i - 1]:
            out[i] = np.nextafter(out[i - 1], np.inf) + 1e-12 * scale
    return out


def histogram_map(x: np.ndarray, source: np.ndarray, landmarks: np.ndarray) -> np.ndarray:
    """Piecewise-linear map through (source -> landmarks), linear beyond the ends."""
    xp = _strictly_increasing(source)
    fp = np.asarray(landmarks, dtype=np.float64)
    y = np.interp(x, xp, fp)
    lo_slope = (fp[1] - fp[0]) / (xp[1] - xp[0])
    hi_slope = (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
    y = np.where(x < xp[0], fp[0] + (x - xp[0]) * lo_slope, y)
    y = np.where(x > xp[-1], fp[-1] + (x - xp[-1]) * hi_slope, y)
    return y


def apply_histogram_standardization(v: Volume, stats: NormalizationStats) -> Volume:
    if v.modality is not stats.modality:
        raise InvalidConfig(f"stats fitted on {stats.modality.value}, volume is {v.modality.value}")
    source = _volume_percentiles(v, stats.landmark_percentiles)
    mapped = histogram_map(v.data.astype(np.float64), source, np.asarray(stats.histogram_landmarks))
    return v.with_data(mapped)


def normalize(v: Volume, stats: NormalizationStats, order: NormOrder | str = NormOrder.HIST_THEN_Z) -> Volume:
    """Model-input normalization: histogram standardization plus z-scoring."""
    order = NormOrder(order)
    if order is NormOrder.HIST_THEN_Z:
        return znormalize(apply_histogram_standardization(v, stats))
    return apply_histogram_standardization(znormalize(v), stats)


def fit_normalization(
    volumes: Sequence[Volume], order: NormOrder | str = NormOrder.HIST_THEN_Z
) -> NormalizationStats:
    """Fit histogram landmarks in the space where they will be applied."""
    order = NormOrder(order)
    if order is NormOrder.Z_THEN_HIST:
        volumes = [znormalize(v) for v in volumes]
    return fit_histogram_standardization(volumes)


def _largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    w = np.asarray(weights, dtype=np.float64)
    raw = total * w / w.sum()
    counts = np.floor(raw).astype(int)
    remainder = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts.tolist()


def make_splits(
    cohort: Sequence[SubjectRecord],
    fold_count: int = 5,
    holdout_fraction: float = 0.12,
    seed: int = 0,
) -> SplitAssignment:
    """Stratified subject-level folds plus a holdout drawn beforehand.

    SHIFT subjects are set aside under the ``SHIFT`` tag and never enter a
    training fold.
    """
    if not cohort:
        raise InvalidConfig("cohort is empty")
    if not 0 <= holdout_fraction < 1:
        raise InvalidConfig("holdout_fraction must lie in [0, 1)")
    if fold_count < 1:
        raise InvalidConfig("fold_count must be positive")

    assignment: dict[str, int | str] = {}
    by_label: dict[Label, list[str]] = {}
    for s in cohort:
        if s.subject_id in assignment or any(s.subject_id in ids for ids in by_label.values()):
            raise InvalidConfig(f"duplicate subject id {s.subject_id}")
        if s.population is Population.SHIFT:
            assignment[s.subject_id] = SHIFT
        else:
            by_label.setdefault(s.label, []).append(s.subject_id)

    labels = sorted(by_label, key=lambda lab: lab.value)
    n_in = sum(len(by_label[lab]) for lab in labels)
    holdout_counts = _largest_remainder(
        int(round(n_in * holdout_fraction)), [len(by_label[lab]) for lab in labels]
    ) if labels else []
    for lab, n_hold in zip(labels, holdout_counts):
        if len(by_label[lab]) - n_hold < fold_count:
            raise TooFewSubjects(
                f"label {lab.value} has {len(by_label[lab]) - n_hold} training subjects, "
                f"fewer than fold_count={fold_count}"
            )

    rng = np.random.default_rng(seed)
    cursor = 0
    for lab, n_hold in zip(labels, holdout_counts):
        ids = sorted(by_label[lab])
        ids = [ids[i] for i in rng.permutation(len(ids))]
        for sid in ids[:n_hold]:
            assignment[sid] = HOLDOUT
        for sid in ids[n_hold:]:
            assignment[sid] = cursor % fold_count
            cursor += 1
    return SplitAssignment(fold_count, assignment)


def first_pair(subject: SubjectRecord) -> ScanPair:
    return subject.scans[0]


def pretraining_pairs(subjects: Sequence[SubjectRecord]) -> list[tuple[SubjectRecord, ScanPair]]:
    """Every scan pair of every subject, in cohort order."""
    return [(s, pair) for s in subjects for pair in s.scans]


def probe_pairs(subjects: Sequence[SubjectRecord]) -> list[tuple[SubjectRecord, ScanPair]]:
    return [(s, first_pair(s)) for s in subjects]
