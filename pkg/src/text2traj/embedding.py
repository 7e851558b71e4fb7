"""Frozen joint-embedding providers and vector utilities.

Real text/image encoders never run in-process. Two providers implement the
same interface: a deterministic stub (hash-seeded pseudo-random vectors
with per-motion-class anchors) and a lookup provider backed by a cache file
of embeddings computed offline.

Stub construction: the ten motion classes get mutually orthonormal anchor
directions (QR of a seeded Gaussian matrix). A text mentioning a class
keyword embeds as sqrt(1-e^2)*anchor + e*u with e=0.15 and u a unit vector
orthogonal to every anchor, so same-class texts have cosine >= 1-2e^2 =
0.955 and cross-class texts at most e^2 = 0.0225. The guarantee needs
dim >= number of classes + 1; smaller dims fall back to plain normalized
anchors without the orthogonality guarantee.
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path

import numpy as np

from .dataio import read_embedding_cache
from .errors import CacheKeyError, InvalidInputError, ShapeError
from .synth import MOTION_CLASSES

DEFAULT_DIM = 512

_PERTURBATION = 0.15

# Checked in order; listing ccw before cw keeps "counter-clockwise" from
# matching the clockwise class via its embedded "clockwise" token.
_CLASS_KEYWORDS: list[tuple[str, tuple[str, ...]]] = [
    ("circle-ccw", ("circle-ccw", "ccw", "counterclockwise", "counter-clockwise",
                    "anticlockwise")),
    ("circle-cw", ("circle-cw", "cw", "clockwise")),
    ("translate-left", ("left", "leftward", "leftwards")),
    ("translate-right", ("right", "rightward", "rightwards")),
    ("translate-up", ("up", "upward", "upwards", "rising", "floating")),
    ("translate-down", ("down", "downward", "downwards", "falling", "sinking")),
    ("zigzag", ("zigzag", "zigzags", "zigzagging", "zig-zag")),
    ("expand", ("expand", "expands", "expanding", "expansion")),
    ("contract", ("contract", "contracts", "contracting", "contraction")),
    ("stationary", ("stationary", "still", "static", "motionless")),
]

_KEYWORD_PATTERNS = [
    (cls, [re.compile(r"(?<![a-z0-9])" + re.escape(kw) + r"(?![a-z0-9])") for kw in kws])
    for cls, kws in _CLASS_KEYWORDS
]


def detect_motion_class(text: str) -> str | None:
    """Return the first motion class whose keyword appears in the text."""
    low = text.lower()
    for cls, patterns in _KEYWORD_PATTERNS:
        if any(p.search(low) for p in patterns):
            return cls
    return None


def _hash_rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise InvalidInputError("zero-norm vector")
    return v / n


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|), clipped to [-1, 1]; zero-norm inputs are rejected."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"vector shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InvalidInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pool_image_embeddings(frames: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """Mean of per-frame embeddings, re-normalized to unit length."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if not frames:
        raise InvalidInputError("cannot pool an empty list of frame embeddings")
    dim = frames[0].shape
    if any(f.shape != dim for f in frames):
        raise ShapeError("frame embeddings have mixed dimensions")
    mean = np.mean(np.stack(frames), axis=0)
    return _unit(mean).astype(np.float32)


def cached_embed(key: str, cache: dict[str, np.ndarray]) -> np.ndarray:
    """Return the stored vector for ``key`` unmodified."""
    try:
        return cache[key]
    except KeyError:
        raise CacheKeyError(f"embedding cache has no key {key!r}") from None


def image_content_key(frame) -> str:
    """Content-addressed cache key for a raster frame."""
    h = hashlib.sha256()
    h.update(int(frame.width_px).to_bytes(4, "little"))
    h.update(int(frame.height_px).to_bytes(4, "little"))
    h.update(np.ascontiguousarray(frame.pixels).tobytes())
    return "img:" + h.hexdigest()


def text_key(text: str) -> str:
    return "text:" + text


class StubEmbeddingProvider:
    """Deterministic stand-in for frozen text/image encoders."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 2:
            raise InvalidInputError(f"provider dim must be >= 2, got {dim}")
        self.dim = dim
        self.seed = seed
        rng = _hash_rng(seed, "class-anchors")
        n_classes = len(MOTION_CLASSES)
        raw = rng.standard_normal((dim, n_classes))
        if dim >= n_classes:
            q, r = np.linalg.qr(raw)
            anchors = (q * np.sign(np.diag(r))).T  # [C, dim], orthonormal rows
        else:
            anchors = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
        self._anchors = {cls: anchors[i] for i, cls in enumerate(MOTION_CLASSES)}
        self._anchor_mat = anchors if dim >= n_classes else None

    def _perturbation(self, text: str) -> np.ndarray | None:
        """Unit vector orthogonal to all anchors, derived from the text."""
        if self._anchor_mat is None:
            return None
        for salt in range(16):
            raw = _hash_rng(self.seed, "text", text, salt).standard_normal(self.dim)
            resid = raw - self._anchor_mat.T @ (self._anchor_mat @ raw)
            norm = np.linalg.norm(resid)
            if norm > 1e-6:
                return resid / norm
        return None

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise InvalidInputError("cannot embed an empty string")
        cls = detect_motion_class(text)
        if cls is None:
            v = _unit(_hash_rng(self.seed, "text", text, 0).standard_normal(self.dim))
        else:
            u = self._perturbation(text)
            anchor = self._anchors[cls]
            if u is None:
                v = _unit(anchor + 0.05 * _hash_rng(self.seed, "text", text, 0)
                          .standard_normal(self.dim))
            else:
                v = np.sqrt(1.0 - _PERTURBATION**2) * anchor + _PERTURBATION * u
        return v.astype(np.float32)

    def embed_image(self, frame) -> np.ndarray:
        digest = image_content_key(frame)
        v = _unit(_hash_rng(self.seed, "image", digest).standard_normal(self.dim))
        return v.astype(np.float32)

    def class_anchor(self, cls: str) -> np.ndarray:
        if cls not in self._anchors:
            raise InvalidInputError(f"unknown motion class {cls!r}")
        return self._anchors[cls].astype(np.float32)


class CachedEmbeddingProvider:
    """Serves embeddings precomputed offline into a cache file.

    Text lookups use key ``"text:<exact string>"``; image lookups use the
    content-addressed key from :func:`image_content_key`.
    """

    def __init__(self, cache: dict[str, np.ndarray] | str | Path, dim: int = DEFAULT_DIM):
        if not isinstance(cache, dict):
            cache = read_embedding_cache(cache)
        for key, vec in cache.items():
            if vec.shape != (dim,):
                raise ShapeError(
                    f"cache key {key!r} has dim {vec.shape[0]}, provider expects {dim}"
                )
        self.dim = dim
        self._cache = cache

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise InvalidInputError("cannot embed an empty string")
        return cached_embed(text_key(text), self._cache)

    def embed_image(self, frame) -> np.ndarray:
        return cached_embed(image_content_key(frame), self._cache)


def stub_embed_text(text: str, dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """One-shot stub text embedding (constructs a provider internally)."""
    return StubEmbeddingProvider(dim=dim, seed=seed).embed_text(text)
