"""On-disk formats: raw float32 volumes with JSON sidecars, and cohort manifests.

A volume ``name`` is stored as ``name.bin`` (little-endian float32, x index
varying fastest) next to ``name.json``::

    {"shape": [64, 64, 64], "modality": "T1", "voxel_size_mm": 3.0,
     "subject_id": "s0001", "scan_index": 0, "label": "HC",
     "population": "IN_DIST"}
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .volumes import Label, Modality, Population, ScanPair, SubjectRecord, Volume

MANIFEST_VERSION = 1


def _stem(path: str | Path) -> Path:
    path = Path(path)
    if path.suffix in (".bin", ".json"):
        path = path.with_suffix("")
    return path


def write_volume(path: str | Path, volume: Volume, **meta) -> Path:
    """Write ``volume`` and its sidecar; returns the sidecar path."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    raw = np.asarray(volume.data, dtype="<f4").ravel(order="F")
    stem.with_suffix(".bin").write_bytes(raw.tobytes())
    sidecar = {
        "shape": list(volume.shape),
        "modality": volume.modality.value,
        "voxel_size_mm": float(volume.voxel_size_mm),
    }
    for key in ("subject_id", "scan_index", "label", "population"):
        if key in meta and meta[key] is not None:
            value = meta[key]
            sidecar[key] = value.value if hasattr(value, "value") else value
    json_path = stem.with_suffix(".json")
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return json_path


def read_sidecar(path: str | Path) -> dict:
    return json.loads(_stem(path).with_suffix(".json").read_text())


def read_volume(path: str | Path) -> Volume:
    stem = _stem(path)
    meta = read_sidecar(stem)
    shape = tuple(meta["shape"])
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise ValueError(f"{stem}.bin holds {raw.size} voxels, sidecar says {shape}")
    data = raw.reshape(shape, order="F").astype(np.float32)
    return Volume(data, Modality(meta["modality"]), float(meta["voxel_size_mm"]))


def write_cohort(out_dir: str | Path, subjects: Sequence[SubjectRecord], config: dict | None = None) -> Path:
    """Write every volume under ``out_dir/volumes`` plus ``out_dir/cohort.json``."""
    out_dir = Path(out_dir)
    entries = []
    for s in subjects:
        scans = []
        for i, pair in enumerate(s.scans):
            rel = {}
            for key, vol in (("t1", pair.t1), ("falff", pair.falff)):
                name = f"volumes/{s.subject_id}_scan{i}_{key}"
                write_volume(out_dir / name, vol, subject_id=s.subject_id, scan_index=i,
                             label=s.label, population=s.population)
                rel[key] = name + ".json"
            scans.append(rel)
        entries.append({
            "subject_id": s.subject_id,
            "label": s.label.value,
            "population": s.population.value,
            "scans": scans,
        })
    manifest = {"version": MANIFEST_VERSION, "config": config or {}, "subjects": entries}
    path = out_dir / "cohort.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_cohort(path: str | Path) -> tuple[list[SubjectRecord], dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "cohort.json"
    manifest = json.loads(path.read_text())
    root = path.parent
    subjects = []
    for e in manifest["subjects"]:
        scans = tuple(
            ScanPair(read_volume(root / sc["t1"]), read_volume(root / sc["falff"])) for sc in e["scans"]
        )
        subjects.append(SubjectRecord(e["subject_id"], Label(e["label"]), Population(e["population"]), scans))
    return subjects, manifest.get("config", {})


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_files(paths: Iterable[str | Path]) -> dict[str, str]:
    return {str(p): sha256_file(p) for p in paths if Path(p).is_file()}
