"""Encoder pretraining, frozen-encoder linear probes and ROCAUC evaluation."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import FrozenViolation, InvalidConfig, NonFiniteLoss
from .losses import CriticConfig, Regime, composite_loss
from .metrics import rocauc
from .models import (
    Decoder,
    Encoder,
    EncoderConfig,
    ProjectionHead,
    flatten_locations,
    init_weights,
    state_checksum,
)
from .volumes import (
    Label,
    Modality,
    NormalizationStats,
    NormOrder,
    SubjectRecord,
    Volume,
    fit_normalization,
    normalize,
    pretraining_pairs,
    probe_pairs,
)

log = logging.getLogger(__name__)

MODALITIES = (Modality.T1, Modality.FALFF)
_KEY = {Modality.T1: "t1", Modality.FALFF: "falff"}


@dataclass(frozen=True)
class TrainConfig:
    regime: Regime = Regime.S_AE
    pretrain_epochs: int = 200
    probe_epochs: int = 500
    batch_size: int = 64
    # Linear-probe minibatch; None reuses batch_size.
    probe_batch_size: int | None = None
    lr: float = 4e-4
    max_lr: float = 0.01
    pct_start: float = 0.3
    seed: int = 0
    dropout_p: float = 0.0
    pretrain_noise_aug: bool = False
    noise_std_max: float = 1.0
    noise_prob: float = 0.33
    flip_prob: float = 0.5
    crop_pad: int = 4
    norm_order: NormOrder = NormOrder.HIST_THEN_Z
    # Global gradient-norm cap. RAdam takes plain momentum-SGD steps until its variance
    # estimate is usable, and voxel-summed reconstruction gradients diverge there unclipped.
    grad_clip: float | None = 100.0

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        object.__setattr__(self, "norm_order", NormOrder(self.norm_order))
        if self.pretrain_epochs < 0 or self.probe_epochs < 0 or self.batch_size < 1:
            raise InvalidConfig("epochs must be >= 0 and batch_size >= 1")
        if self.probe_batch_size is not None and self.probe_batch_size < 1:
            raise InvalidConfig("probe_batch_size must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidConfig("dropout_p must lie in [0, 1)")
        if not 0 < self.lr <= self.max_lr:
            raise InvalidConfig("need 0 < lr <= max_lr")

    @property
    def label(self) -> str:
        """Run name, e.g. ``SUPERVISED+dropout0.5`` or ``CL_CS+noise``."""
        name = self.regime.value
        if self.dropout_p > 0:
            name += f"+dropout{self.dropout_p:g}"
        if self.pretrain_noise_aug:
            name += "+noise"
        return name

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regime"] = self.regime.value
        d["norm_order"] = self.norm_order.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class AugmentationPolicy:
    """Training-only augmentation, shared by both volumes of a pair."""

    flip_prob: float = 0.5
    crop_pad: int = 4
    noise_std_max: float | None = None
    noise_prob: float = 0.33

    @classmethod
    def from_train_config(cls, cfg: TrainConfig) -> "AugmentationPolicy":
        return cls(cfg.flip_prob, cfg.crop_pad, cfg.noise_std_max if cfg.pretrain_noise_aug else None, cfg.noise_prob)

    def __call__(self, batch: Sequence[torch.Tensor], gen: torch.Generator) -> tuple[list[torch.Tensor], dict]:
        """Augment tensors of shape (N, 1, D, H, W) that hold paired samples."""
        n = batch[0].shape[0]
        out = [b.clone() for b in batch]
        p = self.crop_pad
        for i in range(n):
            flips = [d + 1 for d in range(3) if torch.rand((), generator=gen).item() < self.flip_prob]
            offs = torch.randint(0, 2 * p + 1, (3,), generator=gen).tolist() if p > 0 else [0, 0, 0]
            for t in out:
                x = t[i]
                if flips:
                    x = torch.flip(x, flips)
                if p > 0:
                    size = x.shape[1:]
                    x = F.pad(x, (p,) * 6)
                    x = x[:, offs[0]:offs[0] + size[0], offs[1]:offs[1] + size[1], offs[2]:offs[2] + size[2]]
                t[i] = x
        noised = 0
        if self.noise_std_max is not None:
            for t in out:
                for i in range(n):
                    if torch.rand((), generator=gen).item() < self.noise_prob:
                        std = torch.rand((), generator=gen).item() * self.noise_std_max
                        t[i] = t[i] + std * torch.randn(t[i].shape, generator=gen)
                        noised += 1
        return out, {"noise_applied": noised, "n_volumes": n * len(out)}


@dataclass
class EncoderBundle:
    """Trained encoders (one per modality) and everything needed to feed them."""

    config: TrainConfig
    encoder_config: EncoderConfig
    encoders: dict[Modality, Encoder]
    stats: dict[Modality, NormalizationStats]
    decoders: dict[Modality, Decoder] = field(default_factory=dict)
    heads: dict[Modality, ProjectionHead] = field(default_factory=dict)
    epoch: int = 0

    @property
    def label(self) -> str:
        return self.config.label

    def modules(self) -> nn.ModuleDict:
        md = nn.ModuleDict()
        for kind, mods in (("encoder", self.encoders), ("decoder", self.decoders), ("head", self.heads)):
            for m, module in mods.items():
                md[f"{kind}_{_KEY[m]}"] = module
        return md

    def eval(self) -> "EncoderBundle":
        self.modules().eval()
        return self

    def checksum(self) -> str:
        return state_checksum(self.modules())

    def normalize(self, v: Volume) -> Volume:
        return normalize(v, self.stats[v.modality], self.config.norm_order)

    def metadata(self) -> dict:
        return {
            "regime": self.config.regime.value,
            "label": self.label,
            "epoch": self.epoch,
            "seed": self.config.seed,
            "train_config": self.config.to_dict(),
            "encoder_config": self.encoder_config.to_dict(),
            "norm_stats": {_KEY[m]: s.to_dict() for m, s in self.stats.items()},
            "modules": sorted(self.modules().keys()),
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.modules().state_dict(), path.with_suffix(".pt"))
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return path.with_suffix(".pt")

    @classmethod
    def load(cls, path: str | Path) -> "EncoderBundle":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        cfg = TrainConfig.from_dict(meta["train_config"])
        enc_cfg = EncoderConfig.from_dict(meta["encoder_config"])
        stats = {Modality(s["modality"]): NormalizationStats.from_dict(s) for s in meta["norm_stats"].values()}
        bundle = build_bundle(cfg, enc_cfg, stats)
        state = torch.load(path.with_suffix(".pt"), map_location="cpu", weights_only=True)
        bundle.modules().load_state_dict(state)
        bundle.epoch = meta["epoch"]
        return bundle.eval()


def build_bundle(cfg: TrainConfig, enc_cfg: EncoderConfig, stats: dict[Modality, NormalizationStats]) -> EncoderBundle:
    enc_cfg = replace(enc_cfg, dropout3d_p=cfg.dropout_p)
    encoders = {m: init_weights(Encoder(enc_cfg)) for m in MODALITIES}
    decoders = {m: init_weights(Decoder(enc_cfg)) for m in MODALITIES} if cfg.regime.needs_decoder else {}
    heads = {m: init_weights(ProjectionHead()) for m in MODALITIES} if cfg.regime.needs_projection else {}
    return EncoderBundle(cfg, enc_cfg, encoders, stats, decoders, heads)


def one_cycle(optimizer: torch.optim.Optimizer, cfg: TrainConfig, total_steps: int):
    """One-cycle schedule starting at ``lr``, peaking at ``max_lr``."""
    return torch.optim.lr_scheduler.OneCycleLR(
        optimizer,
        max_lr=cfg.max_lr,
        total_steps=total_steps,
        pct_start=cfg.pct_start,
        div_factor=cfg.max_lr / cfg.lr,
        final_div_factor=1e4,
    )


def _label_code(label: Label) -> int:
    return {Label.HC: 0, Label.AD: 1}.get(label, -1)


def _stack(volumes: Sequence[Volume]) -> torch.Tensor:
    return torch.from_numpy(np.stack([v.data for v in volumes]).astype(np.float32))[:, None]


def prepare_pretraining_data(subjects: Sequence[SubjectRecord], cfg: TrainConfig):
    pairs = pretraining_pairs(subjects)
    if cfg.regime is Regime.SUPERVISED:
        pairs = [(s, p) for s, p in pairs if s.label in (Label.HC, Label.AD)]
    if not pairs:
        raise InvalidConfig("no training pairs available for this regime")
    stats = {
        m: fit_normalization([p.get(m) for _, p in pairs], cfg.norm_order)
        for m in MODALITIES
    }
    tensors = {
        m: _stack([normalize(p.get(m), stats[m], cfg.norm_order) for _, p in pairs])
        for m in MODALITIES
    }
    labels = torch.tensor([_label_code(s.label) for s, _ in pairs])
    return stats, tensors, labels


def _forward(bundle: EncoderBundle, sup_heads: dict, batch: dict, labels: torch.Tensor) -> dict:
    regime = bundle.config.regime
    out: dict = {}
    for m in MODALITIES:
        k = _KEY[m]
        z, local = bundle.encoders[m](batch[m])
        out[f"z_{k}"] = z
        if regime is Regime.SUPERVISED:
            out[f"logits_{k}"] = sup_heads[m](z)
        if regime.needs_decoder:
            out[f"x_{k}"] = batch[m]
            out[f"xhat_{k}"] = bundle.decoders[m](z)
        if regime.needs_projection:
            out[f"c_{k}"] = flatten_locations(bundle.heads[m](local))
    out["labels"] = labels
    return out


def pretrain(
    subjects: Sequence[SubjectRecord],
    cfg: TrainConfig,
    run_dir: str | Path | None = None,
    critic: CriticConfig = CriticConfig(),
    encoder_config: EncoderConfig = EncoderConfig(),
    on_step: Callable[[dict], None] | None = None,
) -> tuple[EncoderBundle, list[dict]]:
    """Pretrain one encoder per modality on every scan pair of ``subjects``.

    ``subjects`` must already be restricted to the training folds. Returns
    the bundle (in eval mode) and the per-step log records, which are also
    appended to ``run_dir/train_log.jsonl`` when a run directory is given.
    """
    torch.manual_seed(cfg.seed)
    stats, tensors, labels = prepare_pretraining_data(subjects, cfg)
    bundle = build_bundle(cfg, encoder_config, stats)
    sup_heads = {}
    if cfg.regime is Regime.SUPERVISED:
        sup_heads = {m: init_weights(nn.Linear(encoder_config.latent_dim, 2)) for m in MODALITIES}
    params = list(bundle.modules().parameters()) + [p for h in sup_heads.values() for p in h.parameters()]

    n = labels.shape[0]
    min_batch = 2 if n >= 2 else 1
    batches_per_epoch = n // cfg.batch_size + (1 if n % cfg.batch_size >= min_batch else 0)
    total_steps = cfg.pretrain_epochs * batches_per_epoch
    records: list[dict] = []
    log_fh = None
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        log_fh = open(Path(run_dir) / "train_log.jsonl", "w")
    try:
        if total_steps > 0:
            optimizer = torch.optim.RAdam(params, lr=cfg.lr)
            scheduler = one_cycle(optimizer, cfg, total_steps)
            augment = AugmentationPolicy.from_train_config(cfg)
            gen = torch.Generator().manual_seed(cfg.seed)
            order_rng = np.random.default_rng(cfg.seed)
            bundle.modules().train()
            for h in sup_heads.values():
                h.train()
            step = 0
            for epoch in range(cfg.pretrain_epochs):
                perm = order_rng.permutation(n)
                epoch_losses = []
                for b in range(batches_per_epoch):
                    idx = torch.from_numpy(perm[b * cfg.batch_size:(b + 1) * cfg.batch_size])
                    aug, aug_info = augment([tensors[m][idx] for m in MODALITIES], gen)
                    batch = dict(zip(MODALITIES, aug))
                    out = _forward(bundle, sup_heads, batch, labels[idx])
                    report = composite_loss(cfg.regime, out, critic)
                    rec = {
                        "epoch": epoch,
                        "step": step,
                        "lr": optimizer.param_groups[0]["lr"],
                        "batch_size": int(idx.numel()),
                        **report.as_floats(),
                        "augmentation": aug_info,
                    }
                    if not math.isfinite(rec["total"]):
                        if log_fh:
                            log_fh.write(json.dumps(rec) + "\n")
                        raise NonFiniteLoss(f"non-finite loss at epoch {epoch} step {step}: {rec['components']}")
                    optimizer.zero_grad(set_to_none=True)
                    report.total.backward()
                    if cfg.grad_clip:
                        nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                    optimizer.step()
                    scheduler.step()
                    records.append(rec)
                    epoch_losses.append(rec["total"])
                    if log_fh:
                        log_fh.write(json.dumps(rec) + "\n")
                    if on_step:
                        on_step(rec)
                    step += 1
                bundle.epoch = epoch + 1
                log.info("%s epoch %d/%d mean loss %.4f", cfg.label, epoch + 1, cfg.pretrain_epochs,
                         float(np.mean(epoch_losses)))
    finally:
        if log_fh:
            log_fh.close()
    return bundle.eval(), records


@torch.no_grad()
def encode_normalized(encoder: Encoder, volumes: torch.Tensor, batch_size: int = 16) -> np.ndarray:
    encoder.eval()
    chunks = [encoder(volumes[i:i + batch_size])[0] for i in range(0, volumes.shape[0], batch_size)]
    return torch.cat(chunks).numpy().astype(np.float64) if chunks else np.zeros((0, encoder.cfg.latent_dim))


def extract_features(bundle: EncoderBundle, volumes: Sequence[Volume], normalized: bool = False) -> np.ndarray:
    """Latents of raw (or already normalized) volumes of one modality."""
    if not volumes:
        return np.zeros((0, bundle.encoder_config.latent_dim))
    modality = volumes[0].modality
    if not normalized:
        volumes = [bundle.normalize(v) for v in volumes]
    return encode_normalized(bundle.encoders[modality], _stack(volumes))


@dataclass
class LinearProbe:
    """Standardize features, then a 64 -> 2 linear map; score = AD logit margin."""

    linear: nn.Linear
    feat_mean: np.ndarray
    feat_std: np.ndarray

    @torch.no_grad()
    def score(self, features: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(((np.asarray(features) - self.feat_mean) / self.feat_std).astype(np.float32))
        logits = self.linear(x)
        return (logits[:, 1] - logits[:, 0]).double().numpy()

    def state(self) -> dict:
        return {
            "weight": self.linear.weight.detach().clone(),
            "bias": self.linear.bias.detach().clone(),
            "feat_mean": torch.from_numpy(self.feat_mean),
            "feat_std": torch.from_numpy(self.feat_std),
        }

    @classmethod
    def from_state(cls, state: dict) -> "LinearProbe":
        w = state["weight"]
        lin = nn.Linear(w.shape[1], w.shape[0])
        with torch.no_grad():
            lin.weight.copy_(w)
            lin.bias.copy_(state["bias"])
        return cls(lin, state["feat_mean"].numpy(), state["feat_std"].numpy())


def fit_linear_probe(features: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> LinearProbe:
    """Train a linear classifier on fixed features with RAdam + one-cycle."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise InvalidConfig("features must be (N, d) with one label per row")
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    torch.manual_seed(cfg.seed)
    linear = nn.Linear(features.shape[1], 2)
    # Zero start: no random projection of uninformative features survives a short schedule.
    nn.init.zeros_(linear.weight)
    nn.init.zeros_(linear.bias)
    x = torch.from_numpy(((features - mean) / std).astype(np.float32))
    y = torch.from_numpy(labels)
    n = x.shape[0]
    bs = cfg.probe_batch_size or cfg.batch_size
    steps_per_epoch = math.ceil(n / bs)
    total = cfg.probe_epochs * steps_per_epoch
    if total > 0:
        optimizer = torch.optim.RAdam(linear.parameters(), lr=cfg.lr)
        scheduler = one_cycle(optimizer, cfg, total)
        rng = np.random.default_rng(cfg.seed)
        for _ in range(cfg.probe_epochs):
            perm = torch.from_numpy(rng.permutation(n))
            for b in range(steps_per_epoch):
                idx = perm[b * bs:(b + 1) * bs]
                loss = F.cross_entropy(linear(x[idx]), y[idx])
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                scheduler.step()
    return LinearProbe(linear.eval(), mean, std)


@dataclass
class ProbeModel:
    """Frozen encoder bundle plus a linear probe for one modality."""

    bundle: EncoderBundle
    modality: Modality
    probe: LinearProbe
    encoder_checksum: str
    train_auc: float | None = None

    @property
    def name(self) -> str:
        return self.bundle.label

    def score_features(self, features: np.ndarray) -> np.ndarray:
        return self.probe.score(features)

    def score_volumes(self, volumes: Sequence[Volume], normalized: bool = False) -> np.ndarray:
        return self.score_features(extract_features(self.bundle, volumes, normalized))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.probe.state(), path.with_suffix(".pt"))
        meta = {
            "modality": self.modality.value,
            "label": self.name,
            "encoder_checksum": self.encoder_checksum,
            "train_auc": self.train_auc,
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path.with_suffix(".pt")

    @classmethod
    def load(cls, path: str | Path, bundle: EncoderBundle) -> "ProbeModel":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        state = torch.load(path.with_suffix(".pt"), map_location="cpu", weights_only=True)
        if bundle.checksum() != meta["encoder_checksum"]:
            raise FrozenViolation("probe was trained on a different encoder state")
        return cls(bundle, Modality(meta["modality"]), LinearProbe.from_state(state),
                   meta["encoder_checksum"], meta.get("train_auc"))


def binary_subjects(subjects: Sequence[SubjectRecord]) -> list[SubjectRecord]:
    return [s for s in subjects if s.label in (Label.HC, Label.AD)]


def train_probe(bundle: EncoderBundle, subjects: Sequence[SubjectRecord], modality: Modality | str,
                cfg: TrainConfig) -> ProbeModel:
    """Linear HC-vs-AD probe on the first scan pair of each training subject."""
    modality = Modality(modality)
    bundle.eval()
    before = bundle.checksum()
    chosen = binary_subjects(subjects)
    labels = np.array([_label_code(s.label) for s in chosen])
    if len(set(labels.tolist())) < 2:
        raise InvalidConfig("probe training needs both HC and AD subjects")
    volumes = [p.get(modality) for _, p in probe_pairs(chosen)]
    features = extract_features(bundle, volumes)
    probe = fit_linear_probe(features, labels, cfg)
    after = bundle.checksum()
    if before != after:
        raise FrozenViolation("encoder weights changed during probe training")
    train_auc = rocauc(probe.score(features), labels)
    return ProbeModel(bundle, modality, probe, after, train_auc)


def evaluate(probe: ProbeModel, volumes: Sequence[Volume], labels: Sequence) -> float:
    """ROCAUC of the probe's AD score; labels may be Label values or 0/1."""
    y = np.array([_label_code(lab) if isinstance(lab, Label) else int(lab) for lab in labels])
    return rocauc(probe.score_volumes(volumes), y == 1)


def evaluate_subjects(probe: ProbeModel, subjects: Sequence[SubjectRecord]) -> float:
    chosen = binary_subjects(subjects)
    return evaluate(probe, [s.scans[0].get(probe.modality) for s in chosen], [s.label for s in chosen])
