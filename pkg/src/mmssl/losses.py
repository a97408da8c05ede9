"""Contrastive, reconstruction and supervised objectives.

Every contrastive term is an InfoNCE estimate with a separable critic
``f(u, v) = u.v / sqrt(n)``. Scores are soft-clipped with ``c * tanh(s / c)``
before the softmax. Each term adds ``lambda * mean(raw^2)`` on the unclipped
scores as a penalty. Losses are negated MI estimates, so lower is better and
``loss >= -log N``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import DimMismatch, EmptyBatch, LabelOutOfRange, ShapeMismatch, UnknownRegime


class Regime(str, enum.Enum):
    SUPERVISED = "SUPERVISED"
    AE = "AE"
    S = "S"
    S_AE = "S_AE"
    CL_CS = "CL_CS"

    @property
    def multimodal(self) -> bool:
        return self in (Regime.S, Regime.S_AE, Regime.CL_CS)

    @property
    def needs_decoder(self) -> bool:
        return self in (Regime.AE, Regime.S_AE)

    @property
    def needs_projection(self) -> bool:
        return self is Regime.CL_CS


@dataclass(frozen=True)
class CriticConfig:
    embed_dim: int = 64
    clip_c: float = 20.0
    penalty_lambda: float = 4e-2
    log_form: bool = True

    def __post_init__(self):
        if self.clip_c <= 0 or self.penalty_lambda < 0 or self.embed_dim <= 0:
            raise ValueError(f"invalid critic config {self}")


@dataclass
class LossReport:
    total: torch.Tensor
    components: dict[str, torch.Tensor] = field(default_factory=dict)

    def as_floats(self) -> dict:
        return {
            "total": float(self.total.detach()),
            "components": {k: float(v.detach()) for k, v in self.components.items()},
        }


@dataclass
class InfoNCEResult:
    loss: torch.Tensor
    raw_scores: torch.Tensor


def raw_critic(u: torch.Tensor, v: torch.Tensor, cfg: CriticConfig = CriticConfig()) -> torch.Tensor:
    """All-pairs raw scores ``u_n . v_k / sqrt(n)`` over the last dimension."""
    if u.shape[-1] != v.shape[-1] or u.shape[-1] != cfg.embed_dim:
        raise DimMismatch(f"embedding dims {u.shape[-1]} / {v.shape[-1]} vs critic dim {cfg.embed_dim}")
    return u @ v.transpose(-1, -2) / math.sqrt(cfg.embed_dim)


def clip_scores(raw: torch.Tensor, cfg: CriticConfig = CriticConfig()) -> torch.Tensor:
    return cfg.clip_c * torch.tanh(raw / cfg.clip_c)


def critic_score(u: torch.Tensor, v: torch.Tensor, cfg: CriticConfig = CriticConfig()) -> torch.Tensor:
    """Clipped score of a single pair of embeddings."""
    if u.shape != (cfg.embed_dim,) or v.shape != (cfg.embed_dim,):
        raise DimMismatch(f"expected two {cfg.embed_dim}-vectors, got {tuple(u.shape)} and {tuple(v.shape)}")
    return clip_scores(torch.dot(u, v) / math.sqrt(cfg.embed_dim), cfg)


def critic_penalty(raw_scores: torch.Tensor, cfg: CriticConfig = CriticConfig()) -> torch.Tensor:
    return cfg.penalty_lambda * (raw_scores ** 2).mean()


def infonce_from_scores(raw: torch.Tensor, cfg: CriticConfig = CriticConfig(), clip: bool = True) -> torch.Tensor:
    """InfoNCE loss from a (..., N, N) score matrix with positives on the diagonal.

    Leading dimensions (e.g. spatial locations) are averaged.
    """
    if raw.shape[-1] == 0:
        raise EmptyBatch("InfoNCE needs at least one pair")
    n = raw.shape[-1]
    s = clip_scores(raw, cfg) if clip else raw
    pos = torch.diagonal(s, dim1=-2, dim2=-1)
    log_mean_exp = torch.logsumexp(s, dim=-1) - math.log(n)
    if cfg.log_form:
        mi = pos - log_mean_exp
    else:
        mi = torch.exp(pos - log_mean_exp)
    return -mi.mean()


def infonce(u: torch.Tensor, v: torch.Tensor, cfg: CriticConfig = CriticConfig()) -> InfoNCEResult:
    """Loss for paired rows of ``u`` (N, d) and ``v`` (N, d)."""
    if u.dim() != 2 or u.shape != v.shape:
        raise ShapeMismatch(f"paired embeddings must share shape (N, d), got {tuple(u.shape)} / {tuple(v.shape)}")
    if u.shape[0] == 0:
        raise EmptyBatch("InfoNCE needs at least one pair")
    raw = raw_critic(u, v, cfg)
    return InfoNCEResult(infonce_from_scores(raw, cfg), raw)


def cl_loss(locals_m: torch.Tensor, globals_l: torch.Tensor, cfg: CriticConfig = CriticConfig()) -> InfoNCEResult:
    """Local features of one modality against the other modality's latent.

    ``locals_m`` is (N, J, d) with J locations; ``globals_l`` is (N, d).
    """
    if locals_m.dim() != 3 or globals_l.dim() != 2 or locals_m.shape[0] != globals_l.shape[0]:
        raise ShapeMismatch(f"bad CL shapes {tuple(locals_m.shape)} / {tuple(globals_l.shape)}")
    if locals_m.shape[0] == 0:
        raise EmptyBatch("CL needs at least one sample")
    # raw[j, n, k] = <local_j of sample n, global of sample k>
    raw = torch.einsum("njd,kd->jnk", locals_m, globals_l) / math.sqrt(cfg.embed_dim)
    if locals_m.shape[-1] != cfg.embed_dim:
        raise DimMismatch("local embedding dim does not match critic")
    return InfoNCEResult(infonce_from_scores(raw, cfg), raw)


def cs_loss(locals_m: torch.Tensor, locals_l: torch.Tensor, cfg: CriticConfig = CriticConfig()) -> InfoNCEResult:
    """Spatially aligned local-to-local term; negatives share the location."""
    if locals_m.dim() != 3 or locals_m.shape != locals_l.shape:
        raise ShapeMismatch(f"bad CS shapes {tuple(locals_m.shape)} / {tuple(locals_l.shape)}")
    if locals_m.shape[0] == 0:
        raise EmptyBatch("CS needs at least one sample")
    if locals_m.shape[-1] != cfg.embed_dim:
        raise DimMismatch("local embedding dim does not match critic")
    raw = torch.einsum("njd,kjd->jnk", locals_m, locals_l) / math.sqrt(cfg.embed_dim)
    return InfoNCEResult(infonce_from_scores(raw, cfg), raw)


def s_loss(z_t1: torch.Tensor, z_falff: torch.Tensor,
           cfg: CriticConfig = CriticConfig()) -> tuple[InfoNCEResult, InfoNCEResult]:
    """Symmetric latent similarity: (T1 -> fALFF, fALFF -> T1)."""
    return infonce(z_t1, z_falff, cfg), infonce(z_falff, z_t1, cfg)


def recon_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Squared error summed over voxels, averaged over the batch."""
    if x.shape != x_hat.shape:
        raise ShapeMismatch(f"reconstruction shape {tuple(x_hat.shape)} != input {tuple(x.shape)}")
    return ((x - x_hat) ** 2).flatten(1).sum(dim=1).mean()


def supervised_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if logits.dim() != 2 or logits.shape[1] != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"expected (N, 2) logits for {labels.shape[0]} labels, got {tuple(logits.shape)}")
    if labels.numel() and (labels.min() < 0 or labels.max() > 1):
        raise LabelOutOfRange("labels must be 0 (HC) or 1 (AD)")
    return F.cross_entropy(logits, labels.long())


def composite_loss(regime: Regime | str, out: dict, cfg: CriticConfig = CriticConfig()) -> LossReport:
    """Unweighted sum of the regime's objective terms plus critic penalties.

    ``out`` keys by regime:
      SUPERVISED: logits_t1, logits_falff, labels (a missing modality is skipped)
      AE:         x_t1, xhat_t1, x_falff, xhat_falff
      S:          z_t1, z_falff
      S_AE:       z_t1, z_falff, x_*, xhat_*
      CL_CS:      z_t1, z_falff, c_t1, c_falff (projected locals, (N, J, d))
    """
    try:
        regime = Regime(regime)
    except ValueError as exc:
        raise UnknownRegime(str(regime)) from exc
    comps: dict[str, torch.Tensor] = {}
    raws: list[torch.Tensor] = []

    def add(name: str, res: InfoNCEResult):
        comps[name] = res.loss
        raws.append(res.raw_scores)

    if regime is Regime.SUPERVISED:
        for mod in ("t1", "falff"):
            if f"logits_{mod}" in out:
                comps[f"ce_{mod}"] = supervised_loss(out[f"logits_{mod}"], out["labels"])
    if regime in (Regime.AE, Regime.S_AE):
        for mod in ("t1", "falff"):
            if f"x_{mod}" in out:
                comps[f"recon_{mod}"] = recon_loss(out[f"x_{mod}"], out[f"xhat_{mod}"])
    if regime in (Regime.S, Regime.S_AE):
        a, b = s_loss(out["z_t1"], out["z_falff"], cfg)
        add("s_t1->falff", a)
        add("s_falff->t1", b)
    if regime is Regime.CL_CS:
        add("cl_t1->falff", cl_loss(out["c_t1"], out["z_falff"], cfg))
        add("cl_falff->t1", cl_loss(out["c_falff"], out["z_t1"], cfg))
        add("cs_t1->falff", cs_loss(out["c_t1"], out["c_falff"], cfg))
        add("cs_falff->t1", cs_loss(out["c_falff"], out["c_t1"], cfg))
    if raws:
        comps["penalty"] = sum(critic_penalty(r, cfg) for r in raws)
    if not comps:
        raise ValueError(f"no loss terms could be computed for {regime.value} from keys {sorted(out)}")
    total = sum(comps.values())
    return LossReport(total, comps)
