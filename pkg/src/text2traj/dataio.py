"""File formats: trajectory corpora (JSON lines), binary embedding caches,
and deterministic corpus splits.

Corpus files hold one JSON object per line with fixed key order and
coordinates rounded to 6 decimal places, so writing the same corpus twice
is byte-identical. Embedding caches are little-endian binary (magic
"L2ME") and round-trip float32 vectors bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError, ParseError, ValidationError
from .trajectory import TrajectorySequence

CACHE_MAGIC = b"L2ME"
CACHE_VERSION = 1

_CORPUS_KEYS = {
    "id",
    "width_px",
    "height_px",
    "num_points",
    "num_frames",
    "grid_rows",
    "grid_cols",
    "points_px",
    "visibility",
    "captions",
    "mask_bbox_px",
}


def _round6(arr: np.ndarray) -> list:
    return np.round(np.asarray(arr, dtype=np.float64), 6).tolist()


def _record_of(seq: TrajectorySequence) -> dict:
    t, n, _ = seq.points_px.shape
    # Re-check invariants so a mutated sequence cannot be written.
    if t < 2 or n < 1 or seq.grid_rows * seq.grid_cols != n or not seq.captions:
        raise ValidationError(f"sequence {seq.id!r} violates corpus invariants")
    if not np.isfinite(seq.points_px).all():
        raise ValidationError(f"sequence {seq.id!r} has non-finite coordinates")
    rec = {
        "id": seq.id,
        "width_px": int(seq.width_px),
        "height_px": int(seq.height_px),
        "num_points": n,
        "num_frames": t,
        "grid_rows": int(seq.grid_rows),
        "grid_cols": int(seq.grid_cols),
        "points_px": _round6(seq.points_px),
    }
    if seq.visibility is not None:
        rec["visibility"] = seq.visibility.astype(bool).tolist()
    rec["captions"] = list(seq.captions)
    if seq.mask_bbox_px is not None:
        rec["mask_bbox_px"] = _round6(np.asarray(seq.mask_bbox_px))
    return rec


def write_corpus(seqs: list[TrajectorySequence], path: str | Path) -> None:
    """Write sequences as one JSON object per line, deterministically."""
    lines = [json.dumps(_record_of(s), separators=(", ", ": ")) for s in seqs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _sequence_of(rec: dict, lineno: int) -> TrajectorySequence:
    if not isinstance(rec, dict):
        raise ParseError(f"line {lineno}: record is not an object")
    missing = {"id", "width_px", "height_px", "num_points", "num_frames",
               "grid_rows", "grid_cols", "points_px", "captions"} - rec.keys()
    if missing:
        raise ParseError(f"line {lineno}: missing keys {sorted(missing)}")
    unknown = rec.keys() - _CORPUS_KEYS
    if unknown:
        raise ParseError(f"line {lineno}: unknown keys {sorted(unknown)}")
    seq_id = rec["id"]
    pts = np.asarray(rec["points_px"], dtype=np.float32)
    if pts.ndim != 3 or pts.shape[2] != 2:
        raise ValidationError(f"record {seq_id!r}: points_px must be [T][N][2]")
    if pts.shape[0] != rec["num_frames"] or pts.shape[1] != rec["num_points"]:
        raise ValidationError(
            f"record {seq_id!r}: declared {rec['num_frames']}x{rec['num_points']} "
            f"disagrees with data shape {pts.shape[:2]}"
        )
    if rec["grid_rows"] * rec["grid_cols"] != rec["num_points"]:
        raise ValidationError(
            f"record {seq_id!r}: num_points {rec['num_points']} != "
            f"grid {rec['grid_rows']}x{rec['grid_cols']}"
        )
    vis = rec.get("visibility")
    bbox = rec.get("mask_bbox_px")
    try:
        return TrajectorySequence(
            id=seq_id,
            width_px=rec["width_px"],
            height_px=rec["height_px"],
            points_px=pts,
            captions=list(rec["captions"]),
            grid_rows=rec["grid_rows"],
            grid_cols=rec["grid_cols"],
            visibility=None if vis is None else np.asarray(vis, dtype=bool),
            mask_bbox_px=None if bbox is None else tuple(float(v) for v in bbox),
        )
    except InvalidInputError as exc:
        raise ValidationError(f"record {seq_id!r}: {exc}") from exc


def read_corpus(path: str | Path) -> list[TrajectorySequence]:
    """Read a corpus file, preserving record order and validating invariants."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: malformed record ({exc.msg})") from exc
            out.append(_sequence_of(rec, lineno))
    return out


def write_embedding_cache(
    embeddings: dict[str, np.ndarray], path: str | Path, dim: int | None = None
) -> None:
    """Write key->vector pairs in the binary cache layout, keys sorted."""
    if dim is None:
        if not embeddings:
            raise InvalidInputError("dim required when writing an empty cache")
        dim = len(next(iter(embeddings.values())))
    blob = bytearray()
    blob += CACHE_MAGIC
    blob += struct.pack("<III", CACHE_VERSION, dim, len(embeddings))
    for key in sorted(embeddings):
        vec = np.asarray(embeddings[key], dtype=np.float32)
        if vec.shape != (dim,):
            raise ValidationError(f"cache key {key!r}: vector shape {vec.shape} != ({dim},)")
        if not np.isfinite(vec).all():
            raise ValidationError(f"cache key {key!r}: non-finite entries")
        kb = key.encode("utf-8")
        if len(kb) > 0xFFFF:
            raise ValidationError(f"cache key too long ({len(kb)} bytes)")
        blob += struct.pack("<H", len(kb))
        blob += kb
        blob += vec.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def read_embedding_cache(path: str | Path) -> dict[str, np.ndarray]:
    """Read a binary embedding cache; lossless float32 round-trip."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != CACHE_MAGIC:
        raise FormatError(f"{path}: bad magic (expected {CACHE_MAGIC!r})")
    version, dim, count = struct.unpack_from("<III", data, 4)
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    out: dict[str, np.ndarray] = {}
    offset = 16
    for i in range(count):
        if offset + 2 > len(data):
            raise FormatError(f"{path}: truncated at record {i} (count says {count})")
        (key_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + key_len + 4 * dim > len(data):
            raise FormatError(f"{path}: truncated at record {i} (count says {count})")
        key = data[offset : offset + key_len].decode("utf-8")
        offset += key_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        if key in out:
            raise ValidationError(f"{path}: duplicate key {key!r}")
        if not np.isfinite(vec).all():
            raise ValidationError(f"{path}: key {key!r} has non-finite entries")
        out[key] = vec
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after {count} records")
    return out


def split_corpus(
    seqs: list[TrajectorySequence], train_frac: float, seed: int
) -> tuple[list[TrajectorySequence], list[TrajectorySequence]]:
    """Deterministic disjoint train/test partition by seeded shuffle."""
    if not 0.0 < train_frac < 1.0:
        raise InvalidInputError(f"train_frac must lie in (0, 1), got {train_frac}")
    order = np.random.default_rng(seed).permutation(len(seqs))
    n_train = int(round(len(seqs) * train_frac))
    train = [seqs[i] for i in order[:n_train]]
    test = [seqs[i] for i in order[n_train:]]
    return train, test
