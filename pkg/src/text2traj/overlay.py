"""Deterministic rasterization of trajectory trails onto frames.

Frame t shows, for every tracked point, the polyline of its positions from
frame 0 through t plus a disc marker at the frame-t position. Coverage is
collected into a single mask per frame and blended once:
out = opacity*color + (1-opacity)*background, rounded to nearest byte
(ties up). Lines are integer midpoint-stepped, so output is bit-identical
across platforms; no anti-aliasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .trajectory import TrajectorySequence

DEFAULT_COLOR = (0, 255, 255)  # cyan


@dataclass(frozen=True)
class OverlayStyle:
    color: tuple[int, int, int] = DEFAULT_COLOR
    opacity: float = 0.5
    point_radius_px: int = 2
    line_width_px: int = 1

    def __post_init__(self):
        color = tuple(int(c) for c in self.color)
        if len(color) != 3 or any(c < 0 or c > 255 for c in color):
            raise InvalidInputError("color must be an RGB byte triple")
        object.__setattr__(self, "color", color)
        if not 0.0 < self.opacity <= 1.0:
            raise InvalidInputError("opacity must lie in (0, 1]")
        if self.point_radius_px < 1 or self.line_width_px < 1:
            raise InvalidInputError("point radius and line width must be >= 1")


@dataclass
class RasterFrame:
    """RGB byte image, pixels row-major with shape [H, W, 3]."""

    width_px: int
    height_px: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height_px, self.width_px, 3):
            raise InvalidInputError(
                f"pixel buffer shape {px.shape} != {(self.height_px, self.width_px, 3)}"
            )
        self.pixels = px

    @classmethod
    def solid(cls, width_px: int, height_px: int,
              color: tuple[int, int, int] = (255, 255, 255)) -> "RasterFrame":
        if width_px < 1 or height_px < 1:
            raise InvalidInputError("frame dimensions must be positive")
        px = np.empty((height_px, width_px, 3), dtype=np.uint8)
        px[:] = np.asarray(color, dtype=np.uint8)
        return cls(width_px, height_px, px)

    def to_bytes(self) -> bytes:
        return self.pixels.tobytes()


def _to_pixel_indices(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """Round pixel coordinates to integer indices, clipped to the frame."""
    ij = np.floor(np.asarray(points, dtype=np.float64) + 0.5).astype(np.int64)
    ij[:, 0] = np.clip(ij[:, 0], 0, width - 1)
    ij[:, 1] = np.clip(ij[:, 1], 0, height - 1)
    return ij


def _segment_steps(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integer midpoint line from a to b (inclusive); returns (xs, ys)."""
    dx = int(b[0] - a[0])
    dy = int(b[1] - a[1])
    n = max(abs(dx), abs(dy))
    if n == 0:
        return np.array([a[0]]), np.array([a[1]])
    t = np.arange(n + 1, dtype=np.float64)
    xs = a[0] + np.floor(t * dx / n + 0.5).astype(np.int64)
    ys = a[1] + np.floor(t * dy / n + 0.5).astype(np.int64)
    return xs, ys


def _thicken(mask: np.ndarray, xs: np.ndarray, ys: np.ndarray, half: int) -> None:
    # half = line_width // 2; even widths round up to the next odd width.
    h, w = mask.shape
    if half == 0:
        mask[ys, xs] = True
        return
    for oy in range(-half, half + 1):
        for ox in range(-half, half + 1):
            mask[np.clip(ys + oy, 0, h - 1), np.clip(xs + ox, 0, w - 1)] = True


def _disc_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    span = np.arange(-radius, radius + 1)
    ox, oy = np.meshgrid(span, span)
    keep = ox**2 + oy**2 <= radius**2
    return ox[keep], oy[keep]


def _trail_mask(vertices: np.ndarray, width: int, height: int, line_width: int,
                out: np.ndarray | None = None, start: int = 0) -> np.ndarray:
    """Coverage of the polylines through ``vertices`` [T, N, 2] (int indices).

    With ``out``/``start`` given, only segments from frame index ``start``
    on are added, enabling incremental trail construction across frames.
    """
    mask = out if out is not None else np.zeros((height, width), dtype=bool)
    half = line_width // 2
    t_frames, n_points = vertices.shape[:2]
    for j in range(n_points):
        for t in range(max(start, 1), t_frames):
            xs, ys = _segment_steps(vertices[t - 1, j], vertices[t, j])
            _thicken(mask, xs, ys, half)
        if start == 0:
            x, y = vertices[0, j]
            _thicken(mask, np.array([x]), np.array([y]), half)
    return mask


def _marker_mask(positions: np.ndarray, width: int, height: int, radius: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    ox, oy = _disc_offsets(radius)
    for x, y in positions:
        mask[np.clip(y + oy, 0, height - 1), np.clip(x + ox, 0, width - 1)] = True
    return mask


def _blend(background: np.ndarray, mask: np.ndarray, style: OverlayStyle) -> np.ndarray:
    out = background.astype(np.float64)
    color = np.asarray(style.color, dtype=np.float64)
    out[mask] = np.floor(style.opacity * color + (1.0 - style.opacity) * out[mask] + 0.5)
    return out.astype(np.uint8)


def _resolve_background(background, width: int, height: int) -> RasterFrame:
    if background is None:
        return RasterFrame.solid(width, height)
    if isinstance(background, RasterFrame):
        if background.width_px != width or background.height_px != height:
            raise InvalidInputError(
                f"background {background.width_px}x{background.height_px} does not "
                f"match frame {width}x{height}"
            )
        return background
    return RasterFrame.solid(width, height, tuple(background))


def render_overlay(
    seq: TrajectorySequence,
    t: int,
    background: RasterFrame | tuple[int, int, int] | None = None,
    style: OverlayStyle = OverlayStyle(),
) -> RasterFrame:
    """Render the trail up to frame ``t`` plus frame-t markers."""
    if not 0 <= t < seq.num_frames:
        raise InvalidInputError(f"frame index {t} outside [0, {seq.num_frames})")
    w, h = seq.width_px, seq.height_px
    bg = _resolve_background(background, w, h)
    verts = np.stack(
        [_to_pixel_indices(seq.points_px[i], w, h) for i in range(t + 1)]
    )
    mask = _trail_mask(verts, w, h, style.line_width_px)
    mask |= _marker_mask(verts[t], w, h, style.point_radius_px)
    return RasterFrame(w, h, _blend(bg.pixels, mask, style))


def render_sequence(
    seq: TrajectorySequence,
    backgrounds: list[RasterFrame] | RasterFrame | tuple[int, int, int] | None = None,
    style: OverlayStyle = OverlayStyle(),
) -> list[RasterFrame]:
    """Render all T frames; frame t shows the trail through frame t."""
    w, h = seq.width_px, seq.height_px
    per_frame: list[RasterFrame] | None = None
    if isinstance(backgrounds, list):
        if len(backgrounds) != seq.num_frames:
            raise InvalidInputError(
                f"got {len(backgrounds)} backgrounds for {seq.num_frames} frames"
            )
        per_frame = [_resolve_background(b, w, h) for b in backgrounds]
    else:
        fixed = _resolve_background(backgrounds, w, h)

    verts = np.stack(
        [_to_pixel_indices(seq.points_px[i], w, h) for i in range(seq.num_frames)]
    )
    trail = _trail_mask(verts[:1], w, h, style.line_width_px)
    frames = []
    for t in range(seq.num_frames):
        if t > 0:
            _trail_mask(verts[: t + 1], w, h, style.line_width_px, out=trail, start=t)
        mask = trail | _marker_mask(verts[t], w, h, style.point_radius_px)
        bg = per_frame[t] if per_frame is not None else fixed
        frames.append(RasterFrame(w, h, _blend(bg.pixels, mask, style)))
    return frames


def save_png(frame: RasterFrame, path) -> None:
    """Write a frame as PNG (pixel values per the blending contract)."""
    from PIL import Image

    Image.fromarray(frame.pixels, mode="RGB").save(path, format="PNG")
