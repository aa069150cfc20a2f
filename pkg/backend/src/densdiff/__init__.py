"""Density-controlled latent diffusion backend.

Serves the dual-conditioned generation wire protocol (POST /generate,
GET /healthz) with a small latent diffusion model: a pixel-shuffle
latent space, a UNet noise predictor conditioned on a hashed caption
embedding, and a control branch that injects the rasterized density
map through zero-initialised fusion convolutions.

Modules:

1. ``dmap``      - wire-format density decoding and control rasterization.
2. ``text``      - hashed caption embeddings (null vector for guidance).
3. ``model``     - config, the control UNet, weight save/load.
4. ``diffusion`` - noise schedule and the seeded DDIM sampler.
5. ``pipeline``  - request-shaped generation glue (pad, sample, crop).
6. ``train``     - synthetic-scene training loop and CLI.
7. ``service``   - FastAPI app, wire models, serving CLI.
"""

__version__ = "0.1.0"
