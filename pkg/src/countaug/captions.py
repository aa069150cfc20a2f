"""Caption embeddings, cosine similarity and swap-compatibility sets.

Two images may exchange captions when their caption embeddings are more
similar than a threshold ``tc`` (strict inequality).  ``tc = 0.0`` is the
documented special case that disables the filter entirely so every pair is
compatible, reproducing the swap-freely-at-random baseline.

The built-in encoder is a deterministic hashed n-gram stand-in: lowercase,
split on non-alphanumerics, add character 3-grams per token, hash every
feature into a signed 4096-bin vector weighted by within-caption term
frequency, then L2-normalise.  It is dependency-free and stable across
platforms and processes.  Real text encoders plug in through a sidecar
embedding file which, when provided, takes precedence.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

EMBED_DIM = 4096
EMBED_MAGIC = b"CEMBv1"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass
class CaptionEmbedding:
    """Unit-norm vector describing one caption."""

    vector: np.ndarray
    caption_id: str = ""

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)


def _features(caption: str):
    tokens = _TOKEN_RE.findall(caption.lower())
    feats = list(tokens)
    for tok in tokens:
        feats.extend(tok[i : i + 3] for i in range(len(tok) - 2))
    return feats


def _hash64(data: bytes, person: bytes) -> int:
    digest = hashlib.blake2b(data, digest_size=8, person=person).digest()
    return int.from_bytes(digest, "little")


def embed_caption(caption: str, caption_id: str = "", dim: int = EMBED_DIM) -> CaptionEmbedding:
    """Embed one caption with the built-in hashed n-gram encoder."""
    if not caption:
        raise ValueError("cannot embed an empty caption")
    feats = _features(caption)
    if not feats:
        raise ValueError(f"caption {caption!r} has no alphanumeric tokens")

    vec = np.zeros(dim, dtype=np.float64)
    for feat in feats:
        raw = feat.encode("utf-8")
        idx = _hash64(raw, b"cg.embd.idx") % dim
        sign = 1.0 if _hash64(raw, b"cg.embd.sgn") & 1 else -1.0
        vec[idx] += sign
    vec /= np.linalg.norm(vec)
    return CaptionEmbedding(vector=vec, caption_id=caption_id)


def embed_corpus(captions: dict, dim: int = EMBED_DIM):
    """Embed an ``id -> caption`` map, ordered by id for determinism."""
    return [embed_caption(captions[i], caption_id=i, dim=dim) for i in sorted(captions)]


def cosine_similarity(a: CaptionEmbedding, b: CaptionEmbedding) -> float:
    """Cosine of the angle between two embeddings, in [-1, 1]."""
    if a.vector.shape != b.vector.shape:
        raise ValueError(
            f"dimension mismatch: {a.vector.shape} vs {b.vector.shape}"
        )
    denom = float(np.linalg.norm(a.vector) * np.linalg.norm(b.vector))
    if denom == 0.0:
        raise ValueError("zero-norm embedding")
    return float(np.dot(a.vector, b.vector) / denom)


@dataclass
class CompatibilitySets:
    """Per-image swap candidates above a similarity threshold.

    ``candidates[i]`` never contains ``i`` itself, is symmetric with the
    other lists, and is ordered by descending similarity with id
    tie-breaks, giving downstream sampling a canonical order.
    """

    threshold: float
    candidates: dict

    @classmethod
    def unfiltered(cls, ids) -> "CompatibilitySets":
        """The tc = 0.0 everyone-with-everyone special case."""
        ids = list(ids)
        return cls(
            threshold=0.0,
            candidates={i: [j for j in ids if j != i] for i in ids},
        )


def similarity_matrix(embeddings):
    """Ids plus the symmetrized pairwise cosine matrix, in input order.

    These entries are the canonical similarity values for compatibility
    decisions.  The scalar :func:`cosine_similarity` agrees with them only
    to within a last-bit rounding difference (dot-then-divide versus
    normalise-then-matmul), which matters when a pair lands exactly on a
    threshold, so anything that compares against ``tc`` must read this
    matrix rather than recompute pairs.
    """
    ids = [e.caption_id for e in embeddings]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate caption ids in corpus")
    if not embeddings:
        return ids, np.zeros((0, 0))

    mat = np.stack([e.vector for e in embeddings])
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("zero-norm embedding in corpus")
    mat = mat / norms
    sims = mat @ mat.T
    # Exact symmetry so that "j in candidates[i] <=> i in candidates[j]"
    # holds bit-for-bit, not just approximately.
    return ids, (sims + sims.T) / 2.0


def build_compatible_sets(embeddings, tc: float) -> CompatibilitySets:
    """All pairs with similarity strictly above ``tc`` become candidates.

    Pairwise O(n^2) on purpose: corpora here are a few thousand captions.
    """
    if not 0.0 <= tc <= 1.0:
        raise ValueError(f"tc must be in [0, 1], got {tc}")

    ids, sims = similarity_matrix(embeddings)
    if not ids:
        return CompatibilitySets(threshold=tc, candidates={})

    candidates = {}
    n = len(ids)
    for i in range(n):
        if tc == 0.0:
            chosen = [j for j in range(n) if j != i]
        else:
            chosen = [j for j in range(n) if j != i and sims[i, j] > tc]
        chosen.sort(key=lambda j: (-sims[i, j], ids[j]))
        candidates[ids[i]] = [ids[j] for j in chosen]
    return CompatibilitySets(threshold=tc, candidates=candidates)


def save_embeddings(embeddings, path):
    """Write the sidecar format: magic, count/dim u32 LE, then per item a
    u16 LE id length, the UTF-8 id, and dim float32 LE values."""
    embeddings = list(embeddings)
    if not embeddings:
        raise ValueError("refusing to write an empty embedding file")
    dim = embeddings[0].vector.shape[0]
    out = bytearray(EMBED_MAGIC)
    out += struct.pack("<II", len(embeddings), dim)
    for emb in embeddings:
        if emb.vector.shape[0] != dim:
            raise ValueError("inconsistent embedding dimensions")
        ident = emb.caption_id.encode("utf-8")
        if len(ident) > 0xFFFF:
            raise ValueError(f"id too long: {emb.caption_id!r}")
        out += struct.pack("<H", len(ident))
        out += ident
        out += emb.vector.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def load_embeddings(path):
    """Read a sidecar embedding file; vectors are re-normalised on load."""
    data = Path(path).read_bytes()
    if len(data) < len(EMBED_MAGIC) + 8:
        raise FormatError(f"embedding file too short ({len(data)} bytes)")
    if data[: len(EMBED_MAGIC)] != EMBED_MAGIC:
        raise FormatError(f"bad embedding magic: {data[:6]!r}")
    count, dim = struct.unpack_from("<II", data, len(EMBED_MAGIC))
    pos = len(EMBED_MAGIC) + 8
    embeddings = []
    for _ in range(count):
        if pos + 2 > len(data):
            raise FormatError("truncated embedding file (id length)")
        (id_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + id_len + 4 * dim > len(data):
            raise FormatError("truncated embedding file (payload)")
        caption_id = data[pos : pos + id_len].decode("utf-8")
        pos += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += 4 * dim
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise FormatError(f"zero-norm embedding for id {caption_id!r}")
        embeddings.append(CaptionEmbedding(vector=vec / norm, caption_id=caption_id))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes in embedding file")
    return embeddings


def resolve_embeddings(captions: dict, encoder: str = "builtin"):
    """Embeddings for a caption corpus per the encoder selector.

    ``builtin`` runs the hashed n-gram encoder; ``file:<path>`` loads a
    sidecar file, which must cover every caption id.
    """
    if encoder == "builtin":
        return embed_corpus(captions)
    if encoder.startswith("file:"):
        loaded = {e.caption_id: e for e in load_embeddings(encoder[5:])}
        missing = sorted(set(captions) - set(loaded))
        if missing:
            raise FormatError(f"sidecar embeddings missing ids: {missing[:5]}...")
        return [loaded[i] for i in sorted(captions)]
    raise ValueError(f"unknown encoder {encoder!r} (expected 'builtin' or 'file:<path>')")


def pairs_to_json(compat: CompatibilitySets) -> str:
    """The pairs file body: a plain JSON object mapping id -> candidate ids."""
    return json.dumps(compat.candidates, sort_keys=True, indent=1)


def pairs_from_json(text: str, threshold: float) -> CompatibilitySets:
    """Parse a pairs file back into compatibility sets.

    The file is a bare map and does not carry the threshold it was built
    with, so the caller supplies it (plan headers re-stamp the value).
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"pairs file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FormatError("pairs file must be a JSON object")
    candidates = {}
    for image_id, cands in obj.items():
        if not isinstance(cands, list) or not all(isinstance(c, str) for c in cands):
            raise FormatError(f"candidate list for {image_id!r} must be a list of ids")
        if image_id in cands:
            raise FormatError(f"{image_id!r} appears in its own candidate list")
        candidates[image_id] = list(cands)
    for image_id, cands in candidates.items():
        for c in cands:
            if c not in candidates or image_id not in candidates[c]:
                raise FormatError(f"asymmetric pair ({image_id!r}, {c!r})")
    return CompatibilitySets(threshold=threshold, candidates=candidates)


def save_pairs(compat: CompatibilitySets, path):
    Path(path).write_text(pairs_to_json(compat))


def load_pairs(path, threshold: float) -> CompatibilitySets:
    return pairs_from_json(Path(path).read_text(), threshold)
