"""Command-line entry point: ``mmssl <subcommand> [flags]``.

Exit codes: 0 on success, 2 on usage or configuration errors, 1 on runtime
failures. Every command writes a ``manifest.json`` (or ``<output>.manifest.json``
for ``distort``) holding the resolved config, seeds, input hashes, outputs,
wall-clock time and library versions.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Sequence

from .config import PROFILES, deep_update, resolve_config
from .errors import (
    InvalidConfig,
    InvalidRange,
    MmsslError,
    NonPositiveScale,
    TooFewControlPoints,
    TooFewSubjects,
    UnknownRegime,
)
from .volumes import Modality

log = logging.getLogger("mmssl")

MANIFEST_VERSION = 1
CONFIG_ERRORS = (InvalidConfig, InvalidRange, NonPositiveScale, TooFewControlPoints, TooFewSubjects, UnknownRegime)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _versions() -> dict:
    out = {"python": platform.python_version(), "manifest": MANIFEST_VERSION}
    for dist in ("mmssl", "numpy", "scipy", "torch", "matplotlib"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def write_manifest(path: Path, args: argparse.Namespace, config: dict, seeds: dict, inputs: Sequence,
                   outputs: Sequence, started: float) -> Path:
    from .io import hash_files

    manifest = {
        "command": args.command,
        "argv": list(args.argv),
        "profile": args.profile,
        "config": config,
        "seeds": seeds,
        "inputs": hash_files(inputs),
        "outputs": sorted(str(p) for p in outputs),
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "versions": _versions(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _config(args) -> dict:
    return resolve_config(args.profile, args.config)


def _seed(args, default: int) -> int:
    return default if args.seed is None else args.seed


def _modalities(names: Sequence[str]) -> tuple[Modality, ...]:
    try:
        return tuple(Modality(n.upper()) for n in names)
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc


# --- subcommands ---------------------------------------------------------------

SYNTH_FLAGS = {
    "n_in_dist": dict(type=int),
    "n_shift": dict(type=int),
    "label_mix": dict(type=float, nargs=3, metavar=("HC", "AD", "OTHER")),
    "shift_label_mix": dict(type=float, nargs=3, metavar=("HC", "AD", "OTHER")),
    "scans_per_subject": dict(type=int, nargs=2, metavar=("MIN", "MAX")),
    "signal_strength": dict(type=float),
    "falff_noise_sigma": dict(type=float),
    "shift_intensity_offset": dict(type=float),
    "shift_anatomy_scale": dict(type=float),
}


def cmd_synth(args) -> int:
    from .cohort import cohort_summary
    from .io import write_cohort
    from .pipeline import splits_for, synth_cohort
    from .robustness import num_workers

    started = time.perf_counter()
    cfg = _config(args)
    overrides = {k: getattr(args, k) for k in SYNTH_FLAGS if getattr(args, k) is not None}
    cfg = deep_update(cfg, {"cohort": overrides})
    seed = _seed(args, cfg["cohort"].get("seed", 0))
    subjects, cc = synth_cohort(cfg, seed=seed, workers=num_workers())
    cfg["cohort"] = cc.to_dict()
    out = Path(args.out_dir)
    cohort_path = write_cohort(out, subjects, cc.to_dict())
    splits = splits_for(subjects, cfg, seed)
    splits_path = out / "splits.json"
    splits_path.write_text(json.dumps(splits.to_dict(), indent=2, sort_keys=True) + "\n")
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(cohort_summary(subjects), indent=2, sort_keys=True) + "\n")
    write_manifest(out / "manifest.json", args, cfg, {"cohort": seed, "splits": seed}, [],
                   [cohort_path, splits_path, summary_path], started)
    print(f"wrote {len(subjects)} subjects to {out}")
    return 0


def cmd_distort(args) -> int:
    from .distortions import DistortionSpec, apply
    from .io import read_sidecar, read_volume, write_volume

    started = time.perf_counter()
    try:
        spec = DistortionSpec.from_json(Path(args.spec).read_text())
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise InvalidConfig(f"bad distortion spec {args.spec}: {exc}") from exc
    if args.seed is not None:
        spec = DistortionSpec(spec.family, spec.params, args.seed)
    src = read_volume(args.input)
    meta = {k: v for k, v in read_sidecar(args.input).items() if k in ("subject_id", "scan_index", "label",
                                                                        "population")}
    out_json = write_volume(args.output, apply(spec, src), **meta)
    out_bin = out_json.with_suffix(".bin")
    in_stem = Path(args.input).with_suffix("")
    write_manifest(out_json.with_suffix(".manifest.json"), args, {"spec": spec.to_dict()}, {"spec": spec.seed},
                   [in_stem.with_suffix(".json"), in_stem.with_suffix(".bin"), args.spec], [out_json, out_bin],
                   started)
    print(f"wrote {out_bin}")
    return 0


def _load_cohort_split(cohort_dir: str, exclude_fold: int | None = None):
    from .io import read_cohort
    from .pipeline import split_cohort
    from .volumes import SplitAssignment

    root = Path(cohort_dir)
    if not (root / "cohort.json").exists():
        raise InvalidConfig(f"{root} holds no cohort.json; run `synth` first")
    if not (root / "splits.json").exists():
        raise InvalidConfig(f"{root} holds no splits.json; run `synth` first")
    subjects, _ = read_cohort(root)
    assignment = SplitAssignment.from_dict(json.loads((root / "splits.json").read_text()))
    return split_cohort(subjects, assignment, exclude_fold), [root / "cohort.json", root / "splits.json"]


def cmd_pretrain(args) -> int:
    from .pipeline import run_pretrain, train_config

    started = time.perf_counter()
    cfg = _config(args)
    seed = _seed(args, cfg.get("train", {}).get("seed", 0))
    tcfg = train_config(cfg, args.regime, seed, pretrain_epochs=args.epochs, dropout_p=args.dropout,
                        pretrain_noise_aug=args.noise_aug or None)
    split, inputs = _load_cohort_split(args.cohort, args.exclude_fold)
    run_dir = Path(args.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg = deep_update(cfg, {"train": tcfg.to_dict()})
    (run_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    (run_dir / "splits.json").write_text(json.dumps(split.assignment.to_dict(), indent=2, sort_keys=True) + "\n")
    bundle = run_pretrain(split, tcfg, run_dir)
    outputs = [run_dir / "config.json", run_dir / "splits.json", run_dir / "train_log.jsonl",
               run_dir / "checkpoints" / "encoder.pt", run_dir / "checkpoints" / "encoder.json"]
    write_manifest(run_dir / "manifest.json", args, cfg, {"train": seed}, inputs, outputs, started)
    print(f"{bundle.label}: {len(split.train)} training subjects, encoder saved under {run_dir / 'checkpoints'}")
    return 0


def _run_config(run_dir: Path) -> dict:
    path = run_dir / "config.json"
    if not path.exists():
        raise InvalidConfig(f"{run_dir} holds no config.json; run `pretrain` first")
    return json.loads(path.read_text())


def cmd_probe(args) -> int:
    from .pipeline import load_bundle, probe_path, run_probes
    from .training import TrainConfig

    started = time.perf_counter()
    run_dir = Path(args.run_dir)
    cfg = _run_config(run_dir)
    if args.config is not None:
        cfg = deep_update(cfg, resolve_config(args.profile, args.config))
    train = dict(cfg["train"])
    if args.seed is not None:
        train["seed"] = args.seed
    if args.epochs is not None:
        train["probe_epochs"] = args.epochs
    bundle = load_bundle(run_dir)
    # Regime, dropout and augmentation belong to the encoder; only probe settings may change.
    train.update(regime=bundle.config.regime.value, dropout_p=bundle.config.dropout_p,
                 pretrain_noise_aug=bundle.config.pretrain_noise_aug)
    tcfg = TrainConfig.from_dict(train)
    split, inputs = _load_cohort_split(args.cohort, args.exclude_fold)
    modalities = _modalities(args.modalities)
    _, metrics = run_probes(bundle, split, tcfg, run_dir, modalities)
    outputs = [run_dir / "probe_metrics.json"]
    for m in modalities:
        outputs += [probe_path(run_dir, m).with_suffix(".pt"), probe_path(run_dir, m).with_suffix(".json")]
    inputs += [run_dir / "checkpoints" / "encoder.pt", run_dir / "checkpoints" / "encoder.json"]
    write_manifest(run_dir / "probe_manifest.json", args, deep_update(cfg, {"train": tcfg.to_dict()}),
                   {"train": tcfg.seed}, inputs, outputs, started)
    for m, entry in metrics["modalities"].items():
        held = entry.get("holdout_rocauc")
        print(f"{bundle.label} {m}: train ROCAUC {entry['train_rocauc']:.3f}"
              + (f", holdout ROCAUC {held:.3f}" if held is not None else ""))
    return 0


def _collect_probes(run_dirs: Sequence[str], modalities: Sequence[Modality]):
    from .pipeline import load_probes

    probes, inputs = {}, []
    for rd in run_dirs:
        loaded = load_probes(rd, modalities)
        if not loaded:
            raise InvalidConfig(f"{rd} holds no trained probes; run `probe` first")
        clash = set(loaded) & set(probes)
        if clash:
            raise InvalidConfig(f"two runs share the regime label {sorted(k[0] for k in clash)}")
        probes.update(loaded)
        inputs += sorted(Path(rd, "checkpoints").glob("*.pt"))
    return probes, inputs


def cmd_sweep(args) -> int:
    from .distortions import SEARCH_SPACE
    from .robustness import SweepPlan, emit_report, evaluation_subjects, run_sweep

    started = time.perf_counter()
    cfg = _config(args)
    sweep_cfg = dict(cfg.get("sweep", {}))
    repeats = args.repeats if args.repeats is not None else sweep_cfg.get("repeats_per_point", 3)
    limit = args.max_eval_subjects if args.max_eval_subjects is not None else sweep_cfg.get("max_eval_subjects")
    seed = _seed(args, sweep_cfg.get("seed", 0))
    modalities = _modalities(args.modalities)
    probes, inputs = _collect_probes(args.runs, modalities)
    regimes = sorted({r for r, _ in probes})
    try:
        plan = SweepPlan(regimes, modalities, tuple(args.grids) if args.grids else SEARCH_SPACE, repeats, seed)
    except (KeyError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from exc
    split, cohort_inputs = _load_cohort_split(args.cohort)
    eval_subjects = evaluation_subjects(split.holdout, limit, seed)
    result = run_sweep(plan, probes, eval_subjects)
    paths = emit_report(result, args.out_dir, plots=not args.no_plots)
    cfg = deep_update(cfg, {"sweep": {"plan": plan.to_dict(), "max_eval_subjects": limit}})
    write_manifest(Path(args.out_dir) / "manifest.json", args, cfg, {"sweep": seed}, cohort_inputs + inputs,
                   list(paths.values()), started)
    print(f"{len(result.rows)} sweep rows written to {paths['sweep_csv']}")
    return 0


def cmd_shift_eval(args) -> int:
    from .robustness import run_shift_eval, write_shift_table

    started = time.perf_counter()
    modalities = _modalities(args.modalities)
    probes, inputs = _collect_probes(args.runs, modalities)
    split, cohort_inputs = _load_cohort_split(args.cohort)
    rows = run_shift_eval(probes, split.holdout, split.shift)
    out = Path(args.out_dir)
    table = write_shift_table(rows, out / "shift.csv")
    write_manifest(out / "manifest.json", args, _config(args), {}, cohort_inputs + inputs, [table], started)
    for r in rows:
        print(f"{r.regime} {r.modality}: holdout {r.in_dist_rocauc:.3f}  shift {r.shift_rocauc:.3f}")
    return 0


def cmd_report(args) -> int:
    from .robustness import SweepResult, emit_report, read_shift_table

    started = time.perf_counter()
    result = SweepResult.from_csv(Path(args.sweep).read_text())
    shift_rows = read_shift_table(args.shift) if args.shift else None
    paths = emit_report(result, args.out_dir, shift_rows, plots=not args.no_plots)
    inputs = [args.sweep] + ([args.shift] if args.shift else [])
    write_manifest(Path(args.out_dir) / "manifest.json", args, {}, {}, inputs, list(paths.values()), started)
    print(f"report written to {args.out_dir}")
    return 0


def cmd_validate_grids(args) -> int:
    from .distortions import format_grids

    started = time.perf_counter()
    text = format_grids()
    sys.stdout.write(text)
    if args.out_dir is not None:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grids.txt").write_text(text)
        write_manifest(out / "manifest.json", args, {}, {}, [], [out / "grids.txt"], started)
    return 0


# --- parser --------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_dir_required: bool = True) -> None:
    p.add_argument("--config", help="JSON file overlaid on the profile defaults")
    p.add_argument("--profile", choices=PROFILES, default="desk")
    p.add_argument("--seed", type=int, help="seed for every random draw of this command")
    if out_dir_required is not None:
        p.add_argument("--out-dir", required=out_dir_required)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmssl", description="Robustness sweeps for multimodal self-supervised 3D encoders.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic paired-modality cohort")
    _common(p)
    for name, kw in SYNTH_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, **kw)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("distort", help="apply one distortion to a stored volume")
    _common(p, out_dir_required=None)
    p.add_argument("--input", required=True, help="volume .json or .bin")
    p.add_argument("--spec", required=True, help="JSON {family, params, seed}")
    p.add_argument("--output", required=True, help="output volume path (stem)")
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("pretrain", help="pretrain encoders into a run directory")
    _common(p)
    p.add_argument("--cohort", required=True, help="directory written by `synth`")
    p.add_argument("--regime", required=True, choices=["SUPERVISED", "AE", "S", "S_AE", "CL_CS"])
    p.add_argument("--dropout", type=float, help="Dropout3d probability")
    p.add_argument("--noise-aug", action="store_true", help="random-noise augmentation during pretraining")
    p.add_argument("--epochs", type=int, help="override pretraining epochs")
    p.add_argument("--exclude-fold", type=int, help="hold out one cross-validation fold")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="train linear probes on a frozen pretrained encoder")
    _common(p, out_dir_required=None)
    p.add_argument("--run-dir", required=True, help="directory written by `pretrain`")
    p.add_argument("--cohort", required=True)
    p.add_argument("--modalities", nargs="+", default=["T1", "FALFF"])
    p.add_argument("--epochs", type=int, help="override probe epochs")
    p.add_argument("--exclude-fold", type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sweep", help="score probes across the distortion grids")
    _common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--runs", nargs="+", required=True, help="run directories with trained probes")
    p.add_argument("--grids", nargs="+", help="grid names such as noise.std (default: all 15)")
    p.add_argument("--modalities", nargs="+", default=["T1", "FALFF"])
    p.add_argument("--repeats", type=int)
    p.add_argument("--max-eval-subjects", type=int)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("shift-eval", help="holdout vs SHIFT ROCAUC per probe")
    _common(p)
    p.add_argument("--cohort", required=True)
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--modalities", nargs="+", default=["T1", "FALFF"])
    p.set_defaults(func=cmd_shift_eval)

    p = sub.add_parser("report", help="rebuild summary and plots from sweep.csv")
    _common(p)
    p.add_argument("--sweep", required=True, help="sweep.csv")
    p.add_argument("--shift", help="shift.csv from `shift-eval`")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate-grids", help="print the 15 sweep grids")
    _common(p, out_dir_required=False)
    p.set_defaults(func=cmd_validate_grids)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"mmssl {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (MmsslError, OSError, RuntimeError, ValueError, KeyError) as exc:
        print(f"mmssl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
