"""3D DCGAN-style encoder/decoder and the convolutional projection head.

Shape ladder on a 64^3 input::

    1@64^3 -> 32@32^3 -> 64@16^3 -> 128@8^3 (local map c) -> 256@4^3 -> 64@1^3 (z)
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .errors import ShapeMismatch


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 1
    channel_schedule: tuple[int, ...] = (32, 64, 128, 256)
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    latent_dim: int = 64
    local_layer_index: int = 2
    leaky_slope: float = 0.2
    dropout3d_p: float = 0.0
    input_size: int = 64

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_schedule"] = list(self.channel_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["channel_schedule"] = tuple(d["channel_schedule"])
        return cls(**d)


@dataclass(frozen=True)
class ProjectionHeadConfig:
    in_channels: int = 128
    out_channels: int = 64


class Encoder(nn.Module):
    """Strided-conv encoder returning the latent and the tapped local map."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        blocks = []
        c_in = cfg.in_channels
        for i, c_out in enumerate(cfg.channel_schedule):
            layers = [nn.Conv3d(c_in, c_out, cfg.kernel, cfg.stride, cfg.padding)]
            # DCGAN convention: no normalization after the first convolution.
            if i > 0:
                layers.append(nn.BatchNorm3d(c_out))
            layers.append(nn.LeakyReLU(cfg.leaky_slope))
            blocks.append(nn.Sequential(*layers))
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)
        self.dropout = nn.Dropout3d(cfg.dropout3d_p) if cfg.dropout3d_p > 0 else nn.Identity()
        final_size = cfg.input_size // cfg.stride ** len(cfg.channel_schedule)
        self.head = nn.Conv3d(c_in, cfg.latent_dim, final_size)

    @property
    def local_channels(self) -> int:
        return self.cfg.channel_schedule[self.cfg.local_layer_index]

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        n = self.cfg.input_size
        if x.dim() != 5 or x.shape[1] != self.cfg.in_channels or tuple(x.shape[2:]) != (n, n, n):
            raise ShapeMismatch(f"expected (N, {self.cfg.in_channels}, {n}, {n}, {n}), got {tuple(x.shape)}")
        local = None
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i == self.cfg.local_layer_index:
                local = x
            x = self.dropout(x)
        z = self.head(x).flatten(1)
        return z, local


class Decoder(nn.Module):
    """Transposed-conv mirror of :class:`Encoder` mapping z back to 1@64^3."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        chans = list(reversed(cfg.channel_schedule))
        first_size = cfg.input_size // cfg.stride ** len(chans)
        layers = [
            nn.ConvTranspose3d(cfg.latent_dim, chans[0], first_size),
            nn.BatchNorm3d(chans[0]),
            nn.ReLU(),
        ]
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            layers += [
                nn.ConvTranspose3d(c_in, c_out, cfg.kernel, cfg.stride, cfg.padding),
                nn.BatchNorm3d(c_out),
                nn.ReLU(),
            ]
        layers.append(nn.ConvTranspose3d(chans[-1], cfg.in_channels, cfg.kernel, cfg.stride, cfg.padding))
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.cfg.latent_dim:
            raise ShapeMismatch(f"expected (N, {self.cfg.latent_dim}) latents, got {tuple(z.shape)}")
        return self.net(z[:, :, None, None, None])


class ProjectionHead(nn.Module):
    """One residual block of 1^3 convolutions: shortcut + conv-relu-bn-conv."""

    def __init__(self, cfg: ProjectionHeadConfig = ProjectionHeadConfig()):
        super().__init__()
        self.cfg = cfg
        self.shortcut = nn.Conv3d(cfg.in_channels, cfg.out_channels, 1)
        self.conv1 = nn.Conv3d(cfg.in_channels, cfg.out_channels, 1)
        self.bn = nn.BatchNorm3d(cfg.out_channels)
        self.conv2 = nn.Conv3d(cfg.out_channels, cfg.out_channels, 1)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        if c.dim() != 5 or c.shape[1] != self.cfg.in_channels:
            raise ShapeMismatch(f"expected (N, {self.cfg.in_channels}, D, H, W), got {tuple(c.shape)}")
        return self.shortcut(c) + self.conv2(self.bn(torch.relu(self.conv1(c))))


def _identity_uniform_(weight: torch.Tensor, bound: float = 0.01) -> None:
    with torch.no_grad():
        weight.uniform_(-bound, bound)
        k = min(weight.shape[0], weight.shape[1])
        idx = torch.arange(k)
        weight[idx, idx] = 1.0


def init_weights(model: nn.Module, generator: torch.Generator | None = None) -> nn.Module:
    """Xavier for (de)conv layers, near-identity uniform for projection heads."""
    for module in model.modules():
        if isinstance(module, ProjectionHead):
            for conv in (module.shortcut, module.conv1, module.conv2):
                _identity_uniform_(conv.weight)
                nn.init.zeros_(conv.bias)
        elif isinstance(module, (nn.Conv3d, nn.ConvTranspose3d, nn.Linear)):
            if _inside_head(model, module):
                continue
            nn.init.xavier_uniform_(module.weight, generator=generator)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm3d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
    return model


def _inside_head(model: nn.Module, target: nn.Module) -> bool:
    for module in model.modules():
        if isinstance(module, ProjectionHead) and any(target is m for m in module.modules()):
            return True
    return False


def encode(enc: Encoder, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    return enc(x)


def decode(dec: Decoder, z: torch.Tensor) -> torch.Tensor:
    return dec(z)


def project_local(head: ProjectionHead, c: torch.Tensor) -> torch.Tensor:
    return head(c)


def flatten_locations(local: torch.Tensor) -> torch.Tensor:
    """(N, C, D, H, W) -> (N, D*H*W, C)."""
    return local.flatten(2).transpose(1, 2)


def state_checksum(module: nn.Module) -> str:
    """SHA-256 over every parameter and buffer, in name order."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
