"""Caption conditioning vectors.

The sampler needs two things from a caption: a deterministic embedding
to condition on, and a null vector for the unconditional branch of
classifier-free guidance.  A hashed bag of word n-grams is enough for
both; the model learns whatever structure the hash space has during
fine-tuning, and identical captions always map to identical vectors so
generation stays reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

EMBED_DIM = 64


def _tokens(caption: str) -> list[str]:
    words = caption.lower().split()
    grams = list(words)
    grams.extend(f"{a} {b}" for a, b in zip(words, words[1:]))
    return grams


def embed_caption(caption: str) -> torch.Tensor:
    """Hash a caption into a unit-norm float32 vector of EMBED_DIM."""
    vec = np.zeros(EMBED_DIM, dtype=np.float32)
    for gram in _tokens(caption):
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        bucket = int.from_bytes(digest[:4], "little") % EMBED_DIM
        sign = 1.0 if digest[4] & 1 else -1.0
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return torch.from_numpy(vec)


def null_embedding() -> torch.Tensor:
    """The unconditional branch: an all-zero caption vector."""
    return torch.zeros(EMBED_DIM, dtype=torch.float32)
