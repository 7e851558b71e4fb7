"""Text-to-trajectory generation and latent-space applications.

Generation decodes a conditioning vector (text embedding, pooled image
embedding, or any latent) from a point grid initialized inside a bounding
box, entirely without video frames. Latent utilities cover interpolation,
additive style transfer, and zero-shot classification by cosine
similarity against class text embeddings.
"""

from __future__ import annotations

import warnings

import numpy as np

from .config import RunConfig
from .embedding import cosine_similarity, pool_image_embeddings
from .errors import InvalidInputError, ShapeError
from .model import Checkpoint, TrajectoryModel, decode_sequence, encode_sequence
from .trajectory import (
    GridSpec,
    TrajectorySequence,
    denormalize,
    init_grid,
    normalize,
    normalize_points,
)


def _resolve_model(checkpoint) -> tuple[TrajectoryModel, RunConfig]:
    if isinstance(checkpoint, Checkpoint):
        return checkpoint.cached_model(), checkpoint.config
    raise InvalidInputError("expected a Checkpoint")


def generate(
    checkpoint: Checkpoint,
    condition: np.ndarray,
    grid: GridSpec,
    frame_size: tuple[int, int],
    mode: str | None = None,
    description: str | None = None,
    seq_id: str = "generated",
) -> TrajectorySequence:
    """Decode a trajectory from a conditioning latent and an initial grid."""
    model, config = _resolve_model(checkpoint)
    width, height = frame_size
    condition = np.asarray(condition, dtype=np.float64)
    if condition.shape != (config.latent_dim,):
        raise ShapeError(
            f"condition has shape {condition.shape}, expected ({config.latent_dim},)"
        )
    if grid.num_points != config.num_points:
        raise ShapeError(
            f"grid {grid.rows}x{grid.cols} has {grid.num_points} points, "
            f"model expects {config.num_points}"
        )
    if float(np.linalg.norm(condition)) < 1e-12:
        warnings.warn("zero-norm condition vector; generation is degenerate",
                      stacklevel=2)
    mode = mode or config.decode_mode
    p0 = normalize_points(init_grid(grid), width, height)
    traj = decode_sequence(model, condition.astype(np.float32), p0,
                           config.num_frames, mode)
    points_px = denormalize(traj, width, height)
    return TrajectorySequence(
        id=seq_id,
        width_px=width,
        height_px=height,
        points_px=points_px,
        captions=[description if description else "generated"],
        grid_rows=grid.rows,
        grid_cols=grid.cols,
        mask_bbox_px=grid.bbox_px,
    )


def condition_from_text(provider, text: str) -> np.ndarray:
    return provider.embed_text(text)


def condition_from_image(provider, frames: list) -> np.ndarray:
    """Pooled embedding of raw video frames (no overlays drawn)."""
    if not frames:
        raise InvalidInputError("need at least one frame")
    return pool_image_embeddings([provider.embed_image(f) for f in frames])


def condition_from_overlay(provider, rendered_frames: list) -> np.ndarray:
    """Pooled embedding of trajectory-overlay renders."""
    if not rendered_frames:
        raise InvalidInputError("need at least one rendered frame")
    return pool_image_embeddings([provider.embed_image(f) for f in rendered_frames])


def interpolate(z_a: np.ndarray, z_b: np.ndarray, alpha: float,
                spherical: bool = False) -> np.ndarray:
    """(1-alpha)*z_a + alpha*z_b; optional slerp for unit-norm latents."""
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if z_a.shape != z_b.shape:
        raise ShapeError(f"latent shapes differ: {z_a.shape} vs {z_b.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    if not spherical:
        return ((1.0 - alpha) * z_a + alpha * z_b).astype(np.float32)
    na, nb = np.linalg.norm(z_a), np.linalg.norm(z_b)
    if na == 0.0 or nb == 0.0:
        raise InvalidInputError("spherical interpolation needs nonzero latents")
    ua, ub = z_a / na, z_b / nb
    omega = np.arccos(np.clip(np.dot(ua, ub), -1.0, 1.0))
    if omega < 1e-8:
        return ((1.0 - alpha) * z_a + alpha * z_b).astype(np.float32)
    scale = (1.0 - alpha) * na + alpha * nb
    mixed = (np.sin((1.0 - alpha) * omega) * ua + np.sin(alpha * omega) * ub) / np.sin(omega)
    return (scale * mixed).astype(np.float32)


def style_transfer(z_content: np.ndarray, z_style: np.ndarray,
                   strength: float) -> np.ndarray:
    """z_content + strength * z_style."""
    z_content = np.asarray(z_content, dtype=np.float64)
    z_style = np.asarray(z_style, dtype=np.float64)
    if z_content.shape != z_style.shape:
        raise ShapeError(f"latent shapes differ: {z_content.shape} vs {z_style.shape}")
    return (z_content + strength * z_style).astype(np.float32)


def classify_zero_shot(
    checkpoint: Checkpoint,
    provider,
    seq: TrajectorySequence,
    class_names: list[str],
) -> list[tuple[str, float]]:
    """Rank classes by cosine similarity of their text embeddings to z_p.

    Ties keep class-list order (stable sort), including duplicates.
    """
    if not class_names:
        raise InvalidInputError("need at least one class name")
    model, _ = _resolve_model(checkpoint)
    z = encode_sequence(model, normalize(seq))
    scored = [
        (name, cosine_similarity(z, provider.embed_text(name)))
        for name in class_names
    ]
    return sorted(scored, key=lambda pair: -pair[1])
