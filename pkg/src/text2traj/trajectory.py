"""Trajectory data types, coordinate normalization, and grid initialization.

A trajectory sequence stores N tracked 2D points over T frames in pixel
units, together with the frame dimensions and at least one caption. Model
code operates on the normalized representation, where both coordinates are
mapped affinely into [-1, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

# Default geometry: a 6x6 point grid tracked over 30 frames.
DEFAULT_GRID_ROWS = 6
DEFAULT_GRID_COLS = 6
DEFAULT_NUM_FRAMES = 30


@dataclass
class TrajectorySequence:
    """N points tracked over T frames of 2D pixel coordinates.

    ``points_px`` has shape [T, N, 2] in float32. Coordinates outside the
    frame (0..W in x, 0..H in y) are clamped on construction; the number of
    clamped values is kept in ``clamped_count``. ``visibility`` is carried
    through I/O but never consulted by the model or losses.
    """

    id: str
    width_px: int
    height_px: int
    points_px: np.ndarray
    captions: list[str]
    grid_rows: int = DEFAULT_GRID_ROWS
    grid_cols: int = DEFAULT_GRID_COLS
    visibility: np.ndarray | None = None
    mask_bbox_px: tuple[float, float, float, float] | None = None
    clamped_count: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise InvalidInputError(
                f"sequence {self.id!r}: frame dimensions must be positive, "
                f"got {self.width_px}x{self.height_px}"
            )
        pts = np.asarray(self.points_px, dtype=np.float32)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise InvalidInputError(
                f"sequence {self.id!r}: points_px must have shape [T, N, 2], got {pts.shape}"
            )
        if not np.isfinite(pts).all():
            raise InvalidInputError(f"sequence {self.id!r}: non-finite coordinate")
        t, n, _ = pts.shape
        if t < 2:
            raise InvalidInputError(f"sequence {self.id!r}: need T >= 2 frames, got {t}")
        if n < 1:
            raise InvalidInputError(f"sequence {self.id!r}: need N >= 1 points")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise InvalidInputError(f"sequence {self.id!r}: grid dims must be positive")
        if self.grid_rows * self.grid_cols != n:
            raise InvalidInputError(
                f"sequence {self.id!r}: grid {self.grid_rows}x{self.grid_cols} "
                f"does not match N={n}"
            )
        if not self.captions:
            raise InvalidInputError(f"sequence {self.id!r}: at least one caption required")

        # Real tracks drift off-frame; clamp rather than reject.
        lo = np.zeros(2, dtype=np.float32)
        hi = np.array([self.width_px, self.height_px], dtype=np.float32)
        clamped = np.clip(pts, lo, hi)
        n_clamped = int(np.count_nonzero(clamped != pts))
        if n_clamped:
            logger.warning(
                "sequence %r: clamped %d out-of-frame coordinate(s)", self.id, n_clamped
            )
        self.points_px = clamped
        self.clamped_count = n_clamped

        if self.visibility is not None:
            vis = np.asarray(self.visibility, dtype=bool)
            if vis.shape != (t, n):
                raise InvalidInputError(
                    f"sequence {self.id!r}: visibility shape {vis.shape} != {(t, n)}"
                )
            self.visibility = vis

    @property
    def num_frames(self) -> int:
        return self.points_px.shape[0]

    @property
    def num_points(self) -> int:
        return self.points_px.shape[1]


@dataclass
class NormalizedTrajectory:
    """Trajectory coordinates in [-1, 1] units, shape [T, N, 2] float64."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise InvalidInputError(
                f"normalized points must have shape [T, N, 2], got {pts.shape}"
            )
        if not np.isfinite(pts).all():
            raise InvalidInputError("non-finite normalized coordinate")
        self.points = pts

    @classmethod
    def from_points(cls, points: np.ndarray, strict_range: bool = True) -> "NormalizedTrajectory":
        """Wrap raw points; ``strict_range=False`` admits model predictions
        that drift outside the unit box (they are clamped on pixel ingest)."""
        traj = cls(points)
        if strict_range and (np.abs(traj.points) > 1.0 + 1e-9).any():
            raise InvalidInputError("normalized coordinate outside [-1, 1]")
        return traj

    @property
    def num_frames(self) -> int:
        return self.points.shape[0]

    @property
    def num_points(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class GridSpec:
    """Initial point-grid configuration: rows x cols inside a pixel bbox."""

    rows: int
    cols: int
    bbox_px: tuple[float, float, float, float]

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("grid rows/cols must be >= 1")
        x0, y0, x1, y1 = self.bbox_px
        if not all(np.isfinite(v) for v in self.bbox_px):
            raise InvalidInputError("non-finite bbox")
        if not (x0 < x1 and y0 < y1):
            raise InvalidInputError(f"degenerate bbox {self.bbox_px}: need x0<x1 and y0<y1")

    @property
    def num_points(self) -> int:
        return self.rows * self.cols


def normalize(seq: TrajectorySequence) -> NormalizedTrajectory:
    """Map pixel coordinates to [-1, 1]: (x, y) -> (2x/W - 1, 2y/H - 1)."""
    pts = np.asarray(seq.points_px, dtype=np.float64)
    if not np.isfinite(pts).all():
        raise InvalidInputError("non-finite coordinate")
    scale = np.array([2.0 / seq.width_px, 2.0 / seq.height_px])
    return NormalizedTrajectory(pts * scale - 1.0)


def normalize_points(points_px: np.ndarray, width_px: int, height_px: int) -> np.ndarray:
    """Normalize a bare [..., 2] pixel array to [-1, 1] units."""
    if width_px <= 0 or height_px <= 0:
        raise InvalidInputError("frame dimensions must be positive")
    pts = np.asarray(points_px, dtype=np.float64)
    if not np.isfinite(pts).all():
        raise InvalidInputError("non-finite coordinate")
    scale = np.array([2.0 / width_px, 2.0 / height_px])
    return pts * scale - 1.0


def denormalize(traj: NormalizedTrajectory, width_px: int, height_px: int) -> np.ndarray:
    """Inverse of :func:`normalize`: (x, y) -> ((x+1)W/2, (y+1)H/2).

    Returns a [T, N, 2] float64 pixel array. Out-of-range inputs pass
    through the affine map unchanged; clamping happens on sequence ingest.
    """
    if width_px <= 0 or height_px <= 0:
        raise InvalidInputError("frame dimensions must be positive")
    half = np.array([width_px / 2.0, height_px / 2.0])
    return (traj.points + 1.0) * half


def init_grid(spec: GridSpec) -> np.ndarray:
    """Evenly spaced rows x cols points over the bbox, row-major, [N, 2] float64.

    Corner points coincide with the bbox corners for rows, cols >= 2; a
    single row or column is centered on the bbox midline.
    """
    x0, y0, x1, y1 = spec.bbox_px
    xs = np.linspace(x0, x1, spec.cols) if spec.cols > 1 else np.array([(x0 + x1) / 2.0])
    ys = np.linspace(y0, y1, spec.rows) if spec.rows > 1 else np.array([(y0 + y1) / 2.0])
    gx, gy = np.meshgrid(xs, ys)  # row-major: y varies across rows
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def frame0_grid_spec(seq: TrajectorySequence) -> GridSpec:
    """GridSpec whose bbox is the axis-aligned bounds of the first frame."""
    p0 = seq.points_px[0]
    x0, y0 = p0.min(axis=0)
    x1, y1 = p0.max(axis=0)
    if x0 >= x1 or y0 >= y1:
        # Degenerate first frame (e.g. all points coincide): pad by one pixel.
        x1, y1 = x0 + 1.0, y0 + 1.0
    return GridSpec(seq.grid_rows, seq.grid_cols, (float(x0), float(y0), float(x1), float(y1)))
