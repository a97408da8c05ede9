"""Out-of-distribution sweeps and the distribution-shift evaluation.

Every sweep cell distorts the raw evaluation volumes once, then each probe
normalizes them with its own training statistics and scores them. Per-volume
distortion seeds depend only on (plan seed, repeat, volume index), so all
grid values of a sweep share the same random draws.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .distortions import SEARCH_SPACE, DistortionSpec, SweepGrid, apply, get_grid
from .errors import EmptyResult, MissingProbe, SingleClass
from .metrics import rocauc
from .training import ProbeModel, binary_subjects
from .volumes import Label, Modality, SubjectRecord, Volume

log = logging.getLogger(__name__)

CSV_FIELDS = ("regime", "modality", "family", "param_name", "param_value", "seed", "rocauc", "n_eval")


@dataclass(frozen=True)
class SweepPlan:
    regimes: tuple[str, ...]
    modalities: tuple[Modality, ...] = (Modality.T1, Modality.FALFF)
    grids: tuple[SweepGrid, ...] = SEARCH_SPACE
    repeats_per_point: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(self.regimes))
        object.__setattr__(self, "modalities", tuple(Modality(m) for m in self.modalities))
        object.__setattr__(self, "grids", tuple(get_grid(g) if isinstance(g, str) else g for g in self.grids))
        if self.repeats_per_point < 1:
            raise ValueError("repeats_per_point must be >= 1")

    @property
    def n_cells(self) -> int:
        return sum(len(g.values) for g in self.grids) * self.repeats_per_point * len(self.modalities)

    def to_dict(self) -> dict:
        return {
            "regimes": list(self.regimes),
            "modalities": [m.value for m in self.modalities],
            "grids": [g.name for g in self.grids],
            "repeats_per_point": self.repeats_per_point,
            "seed": self.seed,
        }


@dataclass(frozen=True, order=True)
class SweepRow:
    regime: str
    modality: str
    family: str
    param_name: str
    param_value: float
    seed: int
    rocauc: float
    n_eval: int


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def sorted_rows(self) -> list[SweepRow]:
        return sorted(self.rows)

    def filter(self, **kw) -> list[SweepRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def curve(self, regime: str, modality: Modality | str, grid_name: str) -> tuple[np.ndarray, np.ndarray]:
        """Grid values and the ROCAUC averaged over repeats, in grid order."""
        family, param = grid_name.split(".")
        rows = self.filter(regime=regime, modality=Modality(modality).value, family=family, param_name=param)
        by_value: dict[float, list[float]] = {}
        for r in rows:
            by_value.setdefault(r.param_value, []).append(r.rocauc)
        xs = sorted(by_value)
        return np.asarray(xs, dtype=np.float64), np.asarray([np.mean(by_value[x]) for x in xs])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.sorted_rows():
            w.writerow([r.regime, r.modality, r.family, r.param_name, repr(r.param_value), r.seed,
                        repr(r.rocauc), r.n_eval])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SweepResult":
        rows = []
        for d in csv.DictReader(io.StringIO(text)):
            rows.append(SweepRow(d["regime"], d["modality"], d["family"], d["param_name"],
                                 float(d["param_value"]), int(d["seed"]), float(d["rocauc"]), int(d["n_eval"])))
        return cls(rows)


def evaluation_subjects(subjects: Sequence[SubjectRecord], limit: int | None = None,
                        seed: int = 0) -> list[SubjectRecord]:
    """HC/AD subjects, optionally subsampled to ``limit`` with both labels kept balanced."""
    chosen = binary_subjects(subjects)
    if limit is None or len(chosen) <= limit:
        return chosen
    rng = np.random.default_rng(seed)
    by_label = {lab: [s for s in chosen if s.label is lab] for lab in (Label.HC, Label.AD)}
    n_ad = min(len(by_label[Label.AD]), max(limit // 2, limit - len(by_label[Label.HC])))
    n_hc = min(len(by_label[Label.HC]), limit - n_ad)
    keep = set()
    for lab, k in ((Label.HC, n_hc), (Label.AD, n_ad)):
        for i in rng.choice(len(by_label[lab]), size=k, replace=False):
            keep.add(by_label[lab][i].subject_id)
    return [s for s in chosen if s.subject_id in keep]


def volume_seed(plan_seed: int, repeat: int, index: int) -> int:
    return int(np.random.SeedSequence([plan_seed, repeat, index]).generate_state(1)[0])


def num_workers(default: int = 1) -> int:
    raw = os.environ.get("MMSSL_NUM_WORKERS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer MMSSL_NUM_WORKERS=%r", raw)
        return default


def _check_probes(plan: SweepPlan, probes: Mapping[tuple[str, Modality], ProbeModel]) -> None:
    missing = [(r, m.value) for r in plan.regimes for m in plan.modalities if (r, m) not in probes]
    if missing:
        raise MissingProbe(f"no trained probe for {missing}")


def _score_all(plan, probes, volumes, labels, modality) -> dict[str, float]:
    return {r: rocauc(probes[(r, modality)].score_volumes(volumes), labels) for r in plan.regimes}


def run_sweep(plan: SweepPlan, probes: Mapping[tuple[str, Modality], ProbeModel],
              eval_subjects: Sequence[SubjectRecord], workers: int | None = None) -> SweepResult:
    """Score every probe on distorted copies of the evaluation first pairs."""
    _check_probes(plan, probes)
    subjects = binary_subjects(eval_subjects)
    labels = np.array([s.label is Label.AD for s in subjects])
    if labels.all() or not labels.any():
        raise SingleClass("evaluation set needs HC and AD subjects")
    originals = {m: [s.scans[0].get(m) for s in subjects] for m in plan.modalities}

    cells = [
        (grid, value, rep, m)
        for grid in plan.grids
        for value in grid.values
        for rep in range(plan.repeats_per_point)
        for m in plan.modalities
    ]

    def run_cell(cell) -> list[SweepRow]:
        grid, value, rep, m = cell
        params = grid.params_at(value)
        distorted: list[Volume] = [
            apply(DistortionSpec(grid.family, params, volume_seed(plan.seed, rep, i)), v)
            for i, v in enumerate(originals[m])
        ]
        scores = _score_all(plan, probes, distorted, labels, m)
        return [
            SweepRow(r, m.value, grid.family.value, grid.swept_param, float(value), rep, scores[r], len(subjects))
            for r in plan.regimes
        ]

    workers = num_workers() if workers is None else workers
    log.info("sweep: %d cells x %d regimes on %d volumes, %d worker(s)", len(cells), len(plan.regimes),
             len(subjects), workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run_cell, cells))
    else:
        chunks = [run_cell(c) for c in cells]
    return SweepResult([row for chunk in chunks for row in chunk])


def baseline_scores(plan: SweepPlan, probes: Mapping[tuple[str, Modality], ProbeModel],
                    eval_subjects: Sequence[SubjectRecord]) -> dict[tuple[str, str], float]:
    """Undistorted ROCAUC per (regime, modality)."""
    _check_probes(plan, probes)
    subjects = binary_subjects(eval_subjects)
    labels = np.array([s.label is Label.AD for s in subjects])
    out = {}
    for m in plan.modalities:
        vols = [s.scans[0].get(m) for s in subjects]
        for r, auc in _score_all(plan, probes, vols, labels, m).items():
            out[(r, m.value)] = auc
    return out


@dataclass(frozen=True)
class ShiftRow:
    regime: str
    modality: str
    in_dist_rocauc: float
    shift_rocauc: float
    n_in_dist: int
    n_shift: int


def run_shift_eval(probes: Mapping[tuple[str, Modality], ProbeModel], holdout: Sequence[SubjectRecord],
                   shift: Sequence[SubjectRecord]) -> list[ShiftRow]:
    """Holdout and SHIFT ROCAUC side by side for every probe."""
    hold = binary_subjects(holdout)
    shf = binary_subjects(shift)
    for name, group in (("holdout", hold), ("SHIFT", shf)):
        labs = {s.label for s in group}
        if labs != {Label.HC, Label.AD}:
            raise SingleClass(f"{name} set needs both HC and AD subjects, has {sorted(l.value for l in labs)}")
    rows = []
    for (regime, modality), probe in sorted(probes.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        aucs = []
        for group in (hold, shf):
            scores = probe.score_volumes([s.scans[0].get(modality) for s in group])
            aucs.append(rocauc(scores, [s.label is Label.AD for s in group]))
        rows.append(ShiftRow(regime, modality.value, aucs[0], aucs[1], len(hold), len(shf)))
    return rows


def latent_spread(features: np.ndarray) -> float:
    """Largest per-dimension standard deviation over samples; zero for collapsed latents."""
    f = np.asarray(features, dtype=np.float64)
    return float(f.std(axis=0).max()) if f.shape[0] > 1 else 0.0


def is_collapsed(features: np.ndarray, tol: float = 1e-6) -> bool:
    return latent_spread(features) <= tol


def trend(values: Sequence[float], aucs: Sequence[float]) -> dict:
    """Spearman rho of ROCAUC against the parameter and the count of upward steps."""
    values = np.asarray(values, dtype=np.float64)
    aucs = np.asarray(aucs, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    a = aucs[order]
    if np.ptp(a) == 0:
        rho = 0.0
    else:
        rho = float(spearmanr(values[order], a).statistic)
    inversions = int(np.sum(np.diff(a) > 0))
    return {"rho": rho, "inversions": inversions}


def degradation(result: SweepResult, regime: str, modality: Modality | str, family: str,
                baseline: float) -> float:
    """Mean ROCAUC drop from ``baseline`` over every row of one family."""
    rows = result.filter(regime=regime, modality=Modality(modality).value, family=family)
    if not rows:
        raise EmptyResult(f"no rows for {regime}/{family}")
    return float(baseline - np.mean([r.rocauc for r in rows]))


def summarize(result: SweepResult) -> dict:
    """Per family: mean and sd over repeat seeds for every curve point."""
    groups: dict[tuple, list[float]] = {}
    for r in result.rows:
        groups.setdefault((r.family, r.param_name, r.regime, r.modality, r.param_value), []).append(r.rocauc)
    summary: dict = {}
    for (family, param, regime, modality, value), aucs in sorted(groups.items()):
        summary.setdefault(family, []).append({
            "param_name": param,
            "regime": regime,
            "modality": modality,
            "param_value": value,
            "mean": float(np.mean(aucs)),
            "sd": float(np.std(aucs, ddof=1)) if len(aucs) > 1 else 0.0,
            "n_seeds": len(aucs),
        })
    return summary


def _plot_family(family: str, result: SweepResult, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    rows = [r for r in result.rows if r.family == family]
    params = sorted({r.param_name for r in rows})
    modalities = sorted({r.modality for r in rows})
    regimes = sorted({r.regime for r in rows})
    fig, axes = plt.subplots(len(modalities), len(params), figsize=(4.5 * len(params), 3.5 * len(modalities)),
                             squeeze=False)
    for i, m in enumerate(modalities):
        for j, p in enumerate(params):
            ax = axes[i][j]
            for regime in regimes:
                xs, ys = result.curve(regime, m, f"{family}.{p}")
                if len(xs):
                    ax.plot(xs, ys, marker="o", ms=3, label=regime)
            ax.set_title(f"{m} - {family}")
            ax.set_xlabel(p)
            ax.set_ylabel("ROCAUC")
            ax.set_ylim(0.0, 1.05)
            ax.grid(alpha=0.3)
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    # Fixed metadata keeps the PNG bytes stable across runs.
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def emit_report(result: SweepResult, out_dir: str | Path, shift_rows: Sequence[ShiftRow] | None = None,
                plots: bool = True) -> dict[str, Path]:
    """Write sweep.csv, summary.json and plots/<family>.png under ``out_dir``."""
    if not result.rows:
        raise EmptyResult("sweep result has no rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"sweep_csv": out / "sweep.csv", "summary": out / "summary.json"}
    paths["sweep_csv"].write_text(result.to_csv())
    summary = {"families": summarize(result), "n_rows": len(result.rows)}
    if shift_rows:
        summary["shift"] = [asdict(r) for r in shift_rows]
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if plots:
        (out / "plots").mkdir(exist_ok=True)
        for family in sorted({r.family for r in result.rows}):
            p = out / "plots" / f"{family}.png"
            _plot_family(family, result, p)
            paths[f"plot_{family}"] = p
    return paths


def write_shift_table(rows: Sequence[ShiftRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["regime", "modality", "in_dist_rocauc", "shift_rocauc", "n_in_dist", "n_shift"])
    for r in rows:
        w.writerow([r.regime, r.modality, repr(r.in_dist_rocauc), repr(r.shift_rocauc), r.n_in_dist, r.n_shift])
    path.write_text(buf.getvalue())
    return path


def read_shift_table(path: str | Path) -> list[ShiftRow]:
    with open(path, newline="") as fh:
        return [
            ShiftRow(r["regime"], r["modality"], float(r["in_dist_rocauc"]), float(r["shift_rocauc"]),
                     int(r["n_in_dist"]), int(r["n_shift"]))
            for r in csv.DictReader(fh)
        ]
