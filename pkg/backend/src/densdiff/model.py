"""Noise-prediction network with a density control branch.

The denoiser is a small UNet over a pixel-shuffle latent space.  A
second copy of its encoder consumes the rasterized density map and
feeds each stage back into the main network through 1x1 convolutions
whose weights start at exactly zero.  At initialization the control
branch is therefore a no-op and fine-tuning can only improve on the
unconditional behaviour; the control signal is phased in as those
fusion weights move away from zero.

Caption and timestep conditioning enter every residual block as a
FiLM scale and shift derived from the summed embeddings.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .text import EMBED_DIM

WEIGHTS_FORMAT = "densdiff-weights-v1"


class ModelLoadError(RuntimeError):
    """Weights file is missing, unreadable, or structurally wrong."""


@dataclass(frozen=True)
class BackendConfig:
    """Shape and budget knobs shared by training and serving."""

    base_model_id: str = "pixelshuffle-unet-v1"
    latent_factor: int = 4
    base_channels: int = 32
    cond_dim: int = 128
    text_dim: int = EMBED_DIM
    timesteps: int = 1000
    fine_tune_epochs: int = 350

    @property
    def latent_channels(self) -> int:
        return 3 * self.latent_factor * self.latent_factor

    @property
    def size_multiple(self) -> int:
        # one stride-2 stage under the pixel shuffle
        return self.latent_factor * 2


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (batch, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    angles = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
    if dim % 2:
        emb = nn.functional.pad(emb, (0, 1))
    return emb


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResBlock(nn.Module):
    """Two 3x3 convolutions with FiLM conditioning after the first norm."""

    def __init__(self, c_in: int, c_out: int, cond_dim: int):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.film = nn.Linear(cond_dim, 2 * c_out)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        scale, shift = self.film(cond)[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1.0 + scale) + shift
        h = self.conv2(nn.functional.silu(h))
        return h + self.skip(x)


class Encoder(nn.Module):
    """Stem plus one downsampling stage; returns both resolutions."""

    def __init__(self, config: BackendConfig):
        super().__init__()
        base = config.base_channels
        self.stem = nn.Conv2d(config.latent_channels, base, 3, padding=1)
        self.block1 = ResBlock(base, base, config.cond_dim)
        self.down = nn.Conv2d(base, base * 2, 3, stride=2, padding=1)
        self.block2 = ResBlock(base * 2, base * 2, config.cond_dim)

    def forward(
        self, x: torch.Tensor, cond: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        h1 = self.block1(self.stem(x), cond)
        h2 = self.block2(self.down(h1), cond)
        return h1, h2


def _zero_conv(channels: int) -> nn.Conv2d:
    conv = nn.Conv2d(channels, channels, 1)
    nn.init.zeros_(conv.weight)
    nn.init.zeros_(conv.bias)
    return conv


class ControlUNet(nn.Module):
    """Latent-space denoiser; predicts the noise added to its input."""

    def __init__(self, config: BackendConfig | None = None):
        super().__init__()
        self.config = config or BackendConfig()
        cfg = self.config
        base = cfg.base_channels

        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.cond_dim, cfg.cond_dim),
            nn.SiLU(),
            nn.Linear(cfg.cond_dim, cfg.cond_dim),
        )
        self.text_proj = nn.Linear(cfg.text_dim, cfg.cond_dim)

        self.encoder = Encoder(cfg)
        self.control_encoder = Encoder(cfg)
        self.control_stem = nn.Conv2d(cfg.latent_channels, cfg.latent_channels, 3, padding=1)
        self.fuse1 = _zero_conv(base)
        self.fuse2 = _zero_conv(base * 2)

        self.middle = ResBlock(base * 2, base * 2, cfg.cond_dim)
        self.up = nn.ConvTranspose2d(base * 2, base, 2, stride=2)
        self.block_out = ResBlock(base * 2, base, cfg.cond_dim)
        self.head = nn.Sequential(
            _norm(base),
            nn.SiLU(),
            nn.Conv2d(base, cfg.latent_channels, 3, padding=1),
        )

    def forward(
        self,
        latent: torch.Tensor,
        t: torch.Tensor,
        text_emb: torch.Tensor,
        control: torch.Tensor,
    ) -> torch.Tensor:
        cond = self.time_mlp(timestep_embedding(t, self.config.cond_dim))
        cond = cond + self.text_proj(text_emb)

        h1, h2 = self.encoder(latent, cond)
        c1, c2 = self.control_encoder(latent + self.control_stem(control), cond)

        mid = self.middle(h2 + self.fuse2(c2), cond)
        up = self.up(mid)
        out = self.block_out(torch.cat([up, h1 + self.fuse1(c1)], dim=1), cond)
        return self.head(out)


def save_model(model: ControlUNet, path: str) -> None:
    torch.save(
        {
            "format": WEIGHTS_FORMAT,
            "config": asdict(model.config),
            "state": model.state_dict(),
        },
        path,
    )


def load_model(path: str, device: str = "cpu") -> ControlUNet:
    try:
        payload = torch.load(path, map_location=device, weights_only=True)
    except Exception as exc:
        raise ModelLoadError(f"cannot read weights at {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != WEIGHTS_FORMAT:
        raise ModelLoadError(f"{path} is not a {WEIGHTS_FORMAT} file")
    try:
        model = ControlUNet(BackendConfig(**payload["config"]))
        model.load_state_dict(payload["state"])
    except Exception as exc:
        raise ModelLoadError(f"weights at {path} do not match the network: {exc}") from exc
    model.to(device)
    model.eval()
    return model
