"""Request-shaped generation: density bytes in, RGB pixels out.

Bridges the wire contract and the sampler.  Output dimensions are
arbitrary positive integers, so the canvas is padded up to the
network's size multiple, sampled, then cropped back; the control map
is rasterized at its native resolution and resized onto the padded
canvas so layouts survive dimension mismatches.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .diffusion import NoiseSchedule, SamplerTrace, sample
from .dmap import control_image, decode_dmap
from .model import ControlUNet
from .text import embed_caption


def _pad_up(value: int, multiple: int) -> int:
    return ((value + multiple - 1) // multiple) * multiple


class GenerationPipeline:
    """Owns a model plus its schedule and turns requests into images."""

    def __init__(self, model: ControlUNet):
        self.model = model
        self.schedule = NoiseSchedule.linear(model.config.timesteps)
        factor = model.config.latent_factor
        self.unshuffle = nn.PixelUnshuffle(factor)
        self.shuffle = nn.PixelShuffle(factor)

    def generate(
        self,
        width: int,
        height: int,
        caption: str,
        density_bytes: bytes,
        guidance_scale: float,
        steps: int,
        seed: int,
    ) -> tuple[np.ndarray, SamplerTrace]:
        """Render one image; returns (uint8 array of (height, width, 3), trace)."""
        density = decode_dmap(density_bytes)
        control = torch.from_numpy(control_image(density))[None, :, :, :]

        multiple = self.model.config.size_multiple
        pad_w = _pad_up(width, multiple)
        pad_h = _pad_up(height, multiple)
        control = nn.functional.interpolate(
            control, size=(pad_h, pad_w), mode="bilinear", align_corners=False
        )
        device = next(self.model.parameters()).device
        control_latent = self.unshuffle(control.to(device))

        factor = self.model.config.latent_factor
        shape = (1, self.model.config.latent_channels, pad_h // factor, pad_w // factor)
        latent, trace = sample(
            self.model,
            shape,
            embed_caption(caption),
            control_latent,
            guidance_scale=guidance_scale,
            steps=steps,
            seed=seed,
            schedule=self.schedule,
        )

        image = self.shuffle(latent)[0]
        image = image[:, :height, :width].clamp(-1.0, 1.0)
        pixels = ((image + 1.0) * 127.5).round().to(torch.uint8)
        return pixels.permute(1, 2, 0).cpu().numpy(), trace
