"""Noise schedule and the deterministic guided sampler.

Training adds noise with the usual closed form
x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps and the network is fit to
recover eps.  Sampling runs DDIM with eta 0 so the only randomness is
the seeded initial latent, and applies classifier-free guidance by
evaluating the network twice per step:

    eps = eps_uncond + guidance * (eps_text - eps_uncond)

The density control input is fed to both evaluations; guidance steers
the caption, not the layout.  Every run records what it actually did
in a SamplerTrace so callers can verify the requested hyperparameters
reached the sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .model import ControlUNet
from .text import null_embedding

BETA_START = 1e-4
BETA_END = 0.02


@dataclass
class NoiseSchedule:
    """Linear betas and the cumulative products sampling needs."""

    timesteps: int
    betas: torch.Tensor
    alphas_bar: torch.Tensor

    @classmethod
    def linear(cls, timesteps: int) -> "NoiseSchedule":
        betas = torch.linspace(BETA_START, BETA_END, timesteps, dtype=torch.float32)
        alphas_bar = torch.cumprod(1.0 - betas, dim=0)
        return cls(timesteps=timesteps, betas=betas, alphas_bar=alphas_bar)

    def add_noise(
        self, x0: torch.Tensor, eps: torch.Tensor, t: torch.Tensor
    ) -> torch.Tensor:
        abar = self.alphas_bar.to(x0.device)[t][:, None, None, None]
        return abar.sqrt() * x0 + (1.0 - abar).sqrt() * eps


@dataclass
class SamplerTrace:
    """What one sampling run observed, filled in by the loop itself."""

    guidance_scale: float
    steps: int
    seed: int
    timesteps: list[int] = field(default_factory=list)
    model_calls: int = 0


def sample(
    model: ControlUNet,
    shape: tuple[int, int, int, int],
    text_emb: torch.Tensor,
    control: torch.Tensor,
    guidance_scale: float,
    steps: int,
    seed: int,
    schedule: NoiseSchedule | None = None,
) -> tuple[torch.Tensor, SamplerTrace]:
    """Draw one latent sample; returns (x0, trace)."""
    if schedule is None:
        schedule = NoiseSchedule.linear(model.config.timesteps)
    device = next(model.parameters()).device
    trace = SamplerTrace(guidance_scale=guidance_scale, steps=steps, seed=seed)

    # torch.Generator seeds are capped below the u64 range the wire allows
    generator = torch.Generator(device="cpu").manual_seed(seed % (2**63))
    x = torch.randn(shape, generator=generator).to(device)

    steps = min(steps, schedule.timesteps)
    plan = torch.linspace(schedule.timesteps - 1, 0, steps).round().long().tolist()
    abar = schedule.alphas_bar.to(device)

    uncond = null_embedding().to(device)[None, :].expand(shape[0], -1)
    text = text_emb.to(device)
    if text.dim() == 1:
        text = text[None, :].expand(shape[0], -1)

    with torch.no_grad():
        for i, step_t in enumerate(plan):
            trace.timesteps.append(int(step_t))
            t = torch.full((shape[0],), step_t, dtype=torch.long, device=device)
            eps_uncond = model(x, t, uncond, control)
            eps_text = model(x, t, text, control)
            trace.model_calls += 2
            eps = eps_uncond + guidance_scale * (eps_text - eps_uncond)

            abar_t = abar[step_t]
            x0 = (x - (1.0 - abar_t).sqrt() * eps) / abar_t.sqrt()
            x0 = x0.clamp(-3.0, 3.0)
            if i + 1 < len(plan):
                abar_prev = abar[plan[i + 1]]
                x = abar_prev.sqrt() * x0 + (1.0 - abar_prev).sqrt() * eps
            else:
                x = x0

    return x, trace
