"""Synthetic labeled-trajectory corpus for desk-scale experiments.

Each sequence is a point grid rigidly carried by one of ten parametric
motion classes, with optional seeded per-coordinate jitter. Captions are
templated from the class; the class vocabulary doubles as the keyword set
the stub embedding provider anchors on.

Conventions: pixel y grows downward, so "up" means decreasing y. Rotation
uses the standard matrix [[cos,-sin],[sin,cos]] on raw pixel coordinates;
"ccw" is the positive-angle direction of that matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .trajectory import GridSpec, TrajectorySequence, init_grid

# Class name -> caption phrasings (first entry is the canonical template).
CAPTION_TEMPLATES: dict[str, list[str]] = {
    "translate-left": [
        "object moving left",
        "thing moving left",
        "object drifting left",
        "shape sliding to the left",
    ],
    "translate-right": [
        "object moving right",
        "thing moving right",
        "object drifting right",
        "shape sliding to the right",
    ],
    "translate-up": [
        "object moving up",
        "thing moving up",
        "object rising up the frame",
        "shape floating up",
    ],
    "translate-down": [
        "object moving down",
        "thing moving down",
        "object sinking down the frame",
        "shape falling down",
    ],
    "circle-cw": [
        "object circling clockwise",
        "thing rotating clockwise",
        "shape spinning clockwise",
    ],
    "circle-ccw": [
        "object circling counterclockwise",
        "thing rotating counterclockwise",
        "shape spinning counterclockwise",
    ],
    "zigzag": [
        "object zigzagging across the frame",
        "thing moving in a zigzag",
        "shape following a zigzag path",
    ],
    "expand": [
        "points expanding outward",
        "object expanding from the center",
        "shape expanding in all directions",
    ],
    "contract": [
        "points contracting inward",
        "object contracting toward the center",
        "shape contracting to its center",
    ],
    "stationary": [
        "object staying still",
        "thing staying stationary",
        "shape holding still",
    ],
}

MOTION_CLASSES: tuple[str, ...] = tuple(CAPTION_TEMPLATES)

TRANSLATION_DIRECTIONS: dict[str, tuple[float, float]] = {
    "translate-left": (-1.0, 0.0),
    "translate-right": (1.0, 0.0),
    "translate-up": (0.0, -1.0),
    "translate-down": (0.0, 1.0),
}

DEFAULT_FRAME_W = 640
DEFAULT_FRAME_H = 480


def _class_offsets(cls: str, p0: np.ndarray, params: dict, num_frames: int) -> np.ndarray:
    """Return absolute point positions [T, N, 2] for a jitter-free motion."""
    t = np.arange(num_frames, dtype=np.float64)
    center = p0.mean(axis=0)
    rel = p0 - center

    if cls in TRANSLATION_DIRECTIONS:
        dx, dy = TRANSLATION_DIRECTIONS[cls]
        vel = params["speed"] * np.array([dx, dy])
        return p0[None, :, :] + t[:, None, None] * vel[None, None, :]

    if cls in ("circle-cw", "circle-ccw"):
        sign = 1.0 if cls == "circle-ccw" else -1.0
        ang = sign * params["omega"] * t
        cos, sin = np.cos(ang), np.sin(ang)
        x = cos[:, None] * rel[None, :, 0] - sin[:, None] * rel[None, :, 1]
        y = sin[:, None] * rel[None, :, 0] + cos[:, None] * rel[None, :, 1]
        return center[None, None, :] + np.stack([x, y], axis=2)

    if cls == "zigzag":
        # Steady x advance with a triangle-wave lateral offset.
        phase = t / params["period"]
        tri = 2.0 * np.abs(phase - np.floor(phase + 0.5))  # in [0, 1]
        lateral = params["amplitude"] * (2.0 * tri - 1.0)
        out = p0[None, :, :] + np.zeros((num_frames, 1, 2))
        out[:, :, 0] += t[:, None] * params["speed"]
        out[:, :, 1] += (lateral - lateral[0])[:, None]
        return out

    if cls in ("expand", "contract"):
        final = params["final_scale"]
        scale = 1.0 + (final - 1.0) * t / (num_frames - 1)
        return center[None, None, :] + scale[:, None, None] * rel[None, :, :]

    if cls == "stationary":
        return np.repeat(p0[None, :, :], num_frames, axis=0)

    raise InvalidInputError(f"unknown motion class {cls!r}")


def _draw_params(cls: str, rng: np.random.Generator) -> dict:
    if cls in TRANSLATION_DIRECTIONS or cls == "zigzag":
        params = {"speed": rng.uniform(1.5, 4.0)}
        if cls == "zigzag":
            params["amplitude"] = rng.uniform(15.0, 40.0)
            params["period"] = rng.uniform(6.0, 12.0)
        return params
    if cls in ("circle-cw", "circle-ccw"):
        return {"omega": rng.uniform(np.pi / 2, 3 * np.pi / 2) / 29.0}
    if cls == "expand":
        return {"final_scale": rng.uniform(1.25, 1.5)}
    if cls == "contract":
        return {"final_scale": rng.uniform(0.4, 0.7)}
    return {}


def make_sequence(
    cls: str,
    seq_id: str,
    rng: np.random.Generator,
    grid_rows: int = 6,
    grid_cols: int = 6,
    num_frames: int = 30,
    width_px: int = DEFAULT_FRAME_W,
    height_px: int = DEFAULT_FRAME_H,
    jitter_px: float = 0.5,
) -> TrajectorySequence:
    """Generate one sequence of the given class from an already-seeded rng."""
    if cls not in CAPTION_TEMPLATES:
        raise InvalidInputError(
            f"unknown motion class {cls!r}; known: {', '.join(MOTION_CLASSES)}"
        )
    if num_frames < 2:
        raise InvalidInputError("num_frames must be >= 2")

    cx = width_px / 2.0 + rng.uniform(-30.0, 30.0)
    cy = height_px / 2.0 + rng.uniform(-30.0, 30.0)
    half_w = rng.uniform(60.0, 90.0)
    half_h = rng.uniform(55.0, 80.0)
    bbox = (cx - half_w, cy - half_h, cx + half_w, cy + half_h)
    p0 = init_grid(GridSpec(grid_rows, grid_cols, bbox))

    params = _draw_params(cls, rng)
    pts = _class_offsets(cls, p0, params, num_frames)
    if jitter_px > 0.0:
        pts = pts + rng.normal(0.0, jitter_px, size=pts.shape)

    templates = CAPTION_TEMPLATES[cls]
    caption = templates[int(rng.integers(len(templates)))]

    return TrajectorySequence(
        id=seq_id,
        width_px=width_px,
        height_px=height_px,
        points_px=pts,
        captions=[caption],
        grid_rows=grid_rows,
        grid_cols=grid_cols,
        mask_bbox_px=tuple(float(v) for v in bbox),
    )


def synth_corpus(
    num_per_class: int,
    classes: list[str] | tuple[str, ...] = MOTION_CLASSES,
    seed: int = 0,
    grid_rows: int = 6,
    grid_cols: int = 6,
    num_frames: int = 30,
    width_px: int = DEFAULT_FRAME_W,
    height_px: int = DEFAULT_FRAME_H,
    jitter_px: float = 0.5,
) -> list[TrajectorySequence]:
    """Generate ``num_per_class`` sequences per class, deterministically.

    Motion parameters stay within ranges that keep every coordinate inside
    the frame, so the ingest clamp never distorts the parametric motion.
    """
    if num_per_class < 1:
        raise InvalidInputError("num_per_class must be >= 1")
    for cls in classes:
        if cls not in CAPTION_TEMPLATES:
            raise InvalidInputError(
                f"unknown motion class {cls!r}; known: {', '.join(MOTION_CLASSES)}"
            )
    rng = np.random.default_rng(seed)
    out = []
    for cls in classes:
        for i in range(num_per_class):
            out.append(
                make_sequence(
                    cls,
                    f"{cls}-{i:04d}",
                    rng,
                    grid_rows=grid_rows,
                    grid_cols=grid_cols,
                    num_frames=num_frames,
                    width_px=width_px,
                    height_px=height_px,
                    jitter_px=jitter_px,
                )
            )
    return out


def class_of(seq_id: str) -> str | None:
    """Recover the motion class from a synth sequence id (longest prefix)."""
    best = None
    for cls in MOTION_CLASSES:
        if seq_id.startswith(cls) and (best is None or len(cls) > len(best)):
            best = cls
    return best
