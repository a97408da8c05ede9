"""Glue between cohort files, splits, run directories and the trainers."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .cohort import CohortConfig, generate_cohort
from .errors import InvalidConfig
from .training import EncoderBundle, ProbeModel, TrainConfig, evaluate_subjects, pretrain, train_probe
from .volumes import HOLDOUT, SHIFT, Label, Modality, SplitAssignment, SubjectRecord, make_splits

TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


@dataclass
class CohortSplit:
    train: list[SubjectRecord]
    holdout: list[SubjectRecord]
    shift: list[SubjectRecord]
    assignment: SplitAssignment


def split_cohort(subjects: Sequence[SubjectRecord], assignment: SplitAssignment,
                 exclude_fold: int | None = None) -> CohortSplit:
    by_id = {s.subject_id: s for s in subjects}
    missing = set(by_id) - set(assignment.fold_of_subject)
    if missing:
        raise InvalidConfig(f"{len(missing)} subjects have no split assignment, e.g. {sorted(missing)[:3]}")
    train = [by_id[s] for s in sorted(assignment.training_subjects(exclude_fold))]
    holdout = [by_id[s] for s in assignment.subjects_in(HOLDOUT)]
    shift = [by_id[s] for s in assignment.subjects_in(SHIFT)]
    return CohortSplit(train, holdout, shift, assignment)


def splits_for(subjects: Sequence[SubjectRecord], cfg: dict, seed: int) -> SplitAssignment:
    s = cfg.get("splits", {})
    return make_splits(subjects, s.get("fold_count", 5), s.get("holdout_fraction", 0.12), seed=seed)


def synth_cohort(cfg: dict, seed: int | None = None, workers: int = 1) -> tuple[list[SubjectRecord], CohortConfig]:
    cohort_cfg = dict(cfg.get("cohort", {}))
    if seed is not None:
        cohort_cfg["seed"] = seed
    cc = CohortConfig.from_dict(cohort_cfg)
    return generate_cohort(cc, workers=workers), cc


def train_config(cfg: dict, regime: str, seed: int, **overrides) -> TrainConfig:
    base = {k: v for k, v in cfg.get("train", {}).items() if k in TRAIN_KEYS}
    unknown = set(cfg.get("train", {})) - TRAIN_KEYS
    if unknown:
        raise InvalidConfig(f"unknown train settings: {sorted(unknown)}")
    base.update(regime=regime, seed=seed)
    base.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(base)


def run_pretrain(split: CohortSplit, tcfg: TrainConfig, run_dir: str | Path) -> EncoderBundle:
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    bundle, _ = pretrain(split.train, tcfg, run_dir=run_dir)
    bundle.save(run_dir / "checkpoints" / "encoder")
    return bundle


def load_bundle(run_dir: str | Path) -> EncoderBundle:
    path = Path(run_dir) / "checkpoints" / "encoder.pt"
    if not path.exists():
        raise InvalidConfig(f"no encoder checkpoint in {run_dir}; run `pretrain` first")
    return EncoderBundle.load(path)


def probe_path(run_dir: str | Path, modality: Modality) -> Path:
    return Path(run_dir) / "checkpoints" / f"probe_{modality.value.lower()}"


def run_probes(bundle: EncoderBundle, split: CohortSplit, tcfg: TrainConfig, run_dir: str | Path | None,
               modalities: Sequence[Modality] = (Modality.T1, Modality.FALFF)) -> tuple[dict, dict]:
    """Train one probe per modality; returns the probes and the metrics record."""
    probes, metrics = {}, {"regime": bundle.label, "encoder_checksum": bundle.checksum(), "modalities": {}}
    for m in modalities:
        probe = train_probe(bundle, split.train, m, tcfg)
        entry = {"train_rocauc": probe.train_auc, "n_train": _n_binary(split.train)}
        if _has_both_labels(split.holdout):
            entry["holdout_rocauc"] = evaluate_subjects(probe, split.holdout)
            entry["n_holdout"] = _n_binary(split.holdout)
        probes[m] = probe
        metrics["modalities"][m.value] = entry
        if run_dir is not None:
            probe.save(probe_path(run_dir, m))
    metrics["encoder_checksum_after"] = bundle.checksum()
    if run_dir is not None:
        path = Path(run_dir) / "probe_metrics.json"
        path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return probes, metrics


def load_probes(run_dir: str | Path, modalities: Sequence[Modality]) -> dict[tuple[str, Modality], ProbeModel]:
    bundle = load_bundle(run_dir)
    out = {}
    for m in modalities:
        p = probe_path(run_dir, m)
        if not p.with_suffix(".pt").exists():
            continue
        out[(bundle.label, m)] = ProbeModel.load(p, bundle)
    return out


def _n_binary(subjects: Sequence[SubjectRecord]) -> int:
    return sum(1 for s in subjects if s.label in (Label.HC, Label.AD))


def _has_both_labels(subjects: Sequence[SubjectRecord]) -> bool:
    return {s.label for s in subjects} >= {Label.HC, Label.AD}

