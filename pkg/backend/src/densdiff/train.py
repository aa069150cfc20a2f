"""Fine-tuning loop on synthetic counting scenes.

Real deployments adapt the weights on rendered scenes whose layout is
known exactly: a density map built from sampled points, an image with
an object blob at each point, and a caption that fixes the palette.
The objective is plain epsilon-matching, so one step is: noise a clean
latent to a random timestep, predict the noise from (noisy latent,
timestep, caption, control), and take the mean squared error.  A tenth
of the captions are dropped to the null embedding each batch so the
unconditional branch used by guidance gets trained too.
"""

from __future__ import annotations

import argparse
import colorsys
import hashlib

import numpy as np
import torch
from torch import nn

from .diffusion import NoiseSchedule
from .model import BackendConfig, ControlUNet, save_model
from .text import embed_caption, null_embedding

TRAIN_CAPTIONS = (
    "a photo of pebbles on sand",
    "a photo of marbles on felt",
    "a photo of buttons on linen",
    "a photo of berries on a plate",
    "a photo of coins on a desk",
    "a photo of beads on cloth",
    "a photo of candies on paper",
    "a photo of shells on gravel",
)


def caption_palette(caption: str) -> tuple[np.ndarray, np.ndarray]:
    """Background and blob colors in [0, 1], keyed to the caption."""
    digest = hashlib.blake2b(caption.encode("utf-8"), digest_size=4).digest()
    hue = int.from_bytes(digest, "little") / 2**32
    bg = colorsys.hsv_to_rgb(hue, 0.55, 0.78)
    fg = colorsys.hsv_to_rgb((hue + 0.5) % 1.0, 0.65, 0.85)
    return np.asarray(bg, dtype=np.float32), np.asarray(fg, dtype=np.float32)


def make_scene(
    rng: np.random.Generator, size: int, caption: str
) -> tuple[np.ndarray, np.ndarray]:
    """One training example: (image in [0, 1] CHW, density HW)."""
    count = int(rng.integers(0, 13))
    bg, fg = caption_palette(caption)
    image = np.tile(bg[:, None, None], (1, size, size)).astype(np.float32)
    density = np.zeros((size, size), dtype=np.float32)

    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(count):
        cx = float(rng.uniform(3, size - 3))
        cy = float(rng.uniform(3, size - 3))
        dist2 = (xx - cx) ** 2 + (yy - cy) ** 2
        image[:, dist2 <= 9.0] = fg[:, None]
        density += np.exp(-dist2 / (2.0 * 2.0**2)).astype(np.float32)

    image += rng.normal(0.0, 0.02, size=image.shape).astype(np.float32)
    return image.clip(0.0, 1.0), density


def make_batch(
    rng: np.random.Generator, batch: int, size: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack scenes into (images in [-1, 1], densities, caption embeddings)."""
    images, densities, embeds = [], [], []
    for _ in range(batch):
        caption = TRAIN_CAPTIONS[int(rng.integers(0, len(TRAIN_CAPTIONS)))]
        image, density = make_scene(rng, size, caption)
        images.append(torch.from_numpy(image) * 2.0 - 1.0)
        densities.append(torch.from_numpy(density))
        if rng.uniform() < 0.1:
            embeds.append(null_embedding())
        else:
            embeds.append(embed_caption(caption))
    return torch.stack(images), torch.stack(densities), torch.stack(embeds)


def train(
    config: BackendConfig | None = None,
    epochs: int | None = None,
    steps_per_epoch: int = 32,
    batch: int = 8,
    size: int = 64,
    lr: float = 2e-3,
    seed: int = 0,
    device: str = "cpu",
    log_every: int = 0,
) -> ControlUNet:
    """Run the loop and return the trained network."""
    config = config or BackendConfig()
    if epochs is None:
        epochs = config.fine_tune_epochs
    if size % config.size_multiple:
        raise ValueError(f"size must be a multiple of {config.size_multiple}")

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = ControlUNet(config).to(device)
    model.train()
    schedule = NoiseSchedule.linear(config.timesteps)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    unshuffle = nn.PixelUnshuffle(config.latent_factor)

    for epoch in range(epochs):
        total = 0.0
        for _ in range(steps_per_epoch):
            images, densities, embeds = make_batch(rng, batch, size)
            lo = densities.amin(dim=(1, 2), keepdim=True)
            hi = densities.amax(dim=(1, 2), keepdim=True)
            control = (densities - lo) / (hi - lo).clamp(min=1e-8)
            control = control[:, None, :, :].expand(-1, 3, -1, -1)

            x0 = unshuffle(images.to(device))
            control_latent = unshuffle(control.to(device))
            t = torch.randint(0, config.timesteps, (batch,), device=device)
            eps = torch.randn_like(x0)
            x_t = schedule.add_noise(x0, eps, t)

            loss = nn.functional.mse_loss(
                model(x_t, t, embeds.to(device), control_latent), eps
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{epochs} loss {total / steps_per_epoch:.4f}")

    model.eval()
    return model


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="fine-tune the generation backend")
    parser.add_argument("--out", required=True, help="where to write the weights file")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--steps-per-epoch", type=int, default=32)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--lr", type=float, default=2e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    model = train(
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        batch=args.batch,
        size=args.size,
        lr=args.lr,
        seed=args.seed,
        device=args.device,
        log_every=10,
    )
    save_model(model, args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
