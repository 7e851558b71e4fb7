"""Motion-quality metrics, the retrieval harness, and report generation.

ADE/FDE are reported in the units of their inputs (pixels by default, to
match how generation quality is usually tabulated); smoothness is computed
on normalized-unit trajectories. Retrieval ranks every corpus trajectory
against each caption query by cosine similarity in the joint space, ties
broken by corpus index.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import cosine_similarity
from .errors import InvalidInputError, ShapeError
from .inference import generate
from .model import Checkpoint, encode_sequence
from .trajectory import TrajectorySequence, frame0_grid_spec, normalize

METRIC_NAMES = ("ade", "fde", "smoothness", "text_sim", "gen_seconds")


def _pair(gt, pred) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise InvalidInputError(f"shapes differ: {gt.shape} vs {pred.shape}")
    if gt.ndim != 3 or gt.shape[2] != 2:
        raise InvalidInputError(f"expected [T, N, 2], got {gt.shape}")
    return gt, pred


def ade(gt, pred) -> float:
    """Mean Euclidean point distance over all frames and points."""
    gt, pred = _pair(gt, pred)
    return float(np.linalg.norm(gt - pred, axis=2).mean())


def fde(gt, pred) -> float:
    """Mean Euclidean point distance at the final frame."""
    gt, pred = _pair(gt, pred)
    return float(np.linalg.norm(gt[-1] - pred[-1], axis=1).mean())


def smoothness(points) -> float:
    """1 minus the mean frame-to-frame velocity change, clamped to [0, 1].

    Only T-2 velocity changes exist for T frames; the mean runs over those
    and all points. Constant-velocity motion scores exactly 1.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 3 or pts.shape[2] != 2:
        raise InvalidInputError(f"expected [T, N, 2], got {pts.shape}")
    if pts.shape[0] < 3:
        raise InvalidInputError("smoothness needs T >= 3 frames")
    vel = np.diff(pts, axis=0)
    dvel = np.diff(vel, axis=0)
    score = 1.0 - float(np.linalg.norm(dvel, axis=2).mean())
    return float(np.clip(score, 0.0, 1.0))


def text_sim(checkpoint: Checkpoint, provider, seq: TrajectorySequence,
             caption: str) -> float:
    """Cosine similarity between the trajectory latent and the caption embedding."""
    z = encode_sequence(checkpoint.cached_model(), normalize(seq))
    return cosine_similarity(z, provider.embed_text(caption))


def recall_table(text_embs: np.ndarray, traj_embs: np.ndarray,
                 own_index: np.ndarray, ks: list[int]) -> dict[int, float]:
    """Core ranking: R@K percentages for caption queries over trajectory latents.

    ``own_index[q]`` is the corpus index of query q's own sequence. Ties at
    equal scores resolve toward the lower corpus index.
    """
    if len(text_embs) == 0 or len(traj_embs) == 0:
        raise InvalidInputError("empty query or corpus")
    q = np.asarray(text_embs, dtype=np.float64)
    g = np.asarray(traj_embs, dtype=np.float64)
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"embedding dims differ: {q.shape[1]} vs {g.shape[1]}")
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    gn = g / np.linalg.norm(g, axis=1, keepdims=True)
    scores = qn @ gn.T  # [Q, M]
    ranks = np.empty(len(q), dtype=np.int64)
    for i, row in enumerate(scores):
        order = np.argsort(-row, kind="stable")
        ranks[i] = int(np.nonzero(order == own_index[i])[0][0]) + 1
    return {int(k): float(100.0 * np.mean(ranks <= k)) for k in ks}


def retrieval_recall(checkpoint: Checkpoint, provider,
                     corpus: list[TrajectorySequence], ks: list[int],
                     use_overlays: bool = False) -> dict[int, float]:
    """R@K over all (caption, sequence) query pairs in the corpus.

    Trajectory latents use the trajectory-only encoder path unless
    ``use_overlays`` renders and embeds overlay features first.
    """
    if not corpus:
        raise InvalidInputError("empty corpus")
    if not ks:
        raise InvalidInputError("need at least one K")
    model = checkpoint.cached_model()
    feats = None
    traj_embs = []
    for seq in corpus:
        if use_overlays:
            from .training import compute_overlay_features, overlay_style_from_config

            feats = compute_overlay_features(
                seq, provider, overlay_style_from_config(checkpoint.config))
        traj_embs.append(encode_sequence(model, normalize(seq), feats))
    text_embs, own = [], []
    for idx, seq in enumerate(corpus):
        for caption in seq.captions:
            text_embs.append(provider.embed_text(caption))
            own.append(idx)
    return recall_table(np.stack(text_embs), np.stack(traj_embs),
                        np.asarray(own), ks)


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    retrieval: dict[int, float] | None = None
    runtime_seconds: float = 0.0

    def recompute_aggregates(self) -> dict:
        agg = {}
        for name in METRIC_NAMES:
            values = [row[name] for row in self.rows if name in row]
            if values:
                agg[name] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
        return agg

    def to_dict(self) -> dict:
        d = {
            "rows": self.rows,
            "aggregates": self.aggregates,
            "runtime_seconds": self.runtime_seconds,
        }
        if self.retrieval is not None:
            d["retrieval"] = {str(k): v for k, v in self.retrieval.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def save_csv(self, path: str | Path) -> None:
        if not self.rows:
            Path(path).write_text("", encoding="utf-8")
            return
        keys = list(self.rows[0].keys())
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.rows)


def static_baseline(seq: TrajectorySequence) -> np.ndarray:
    """The frozen-initial-grid trajectory, for baseline comparisons."""
    return np.repeat(seq.points_px[:1], seq.num_frames, axis=0)


def evaluate_generation(checkpoint: Checkpoint, provider,
                        corpus: list[TrajectorySequence],
                        mode: str | None = None,
                        units: str = "px",
                        retrieval_ks: list[int] | None = None) -> EvalReport:
    """Generate from each test item's caption and frame-0 grid; score vs GT.

    ADE/FDE are in pixels by default (``units="normalized"`` switches to
    unit-box coordinates); smoothness and text similarity always use the
    normalized generated trajectory. ``retrieval_ks`` additionally runs the
    retrieval harness over the corpus and attaches the R@K table.
    """
    if not corpus:
        raise InvalidInputError("empty corpus")
    if units not in ("px", "normalized"):
        raise InvalidInputError(f"units must be 'px' or 'normalized', got {units!r}")
    model = checkpoint.cached_model()
    t_start = time.perf_counter()
    report = EvalReport()
    for seq in corpus:
        caption = seq.captions[0]
        condition = provider.embed_text(caption)
        grid = frame0_grid_spec(seq)
        t0 = time.perf_counter()
        gen = generate(checkpoint, condition, grid,
                       (seq.width_px, seq.height_px), mode=mode,
                       description=caption, seq_id=f"gen-{seq.id}")
        gen_seconds = time.perf_counter() - t0
        gen_norm = normalize(gen)
        if units == "px":
            gt_pts, gen_pts = seq.points_px, gen.points_px
        else:
            gt_pts, gen_pts = normalize(seq).points, gen_norm.points
        z = encode_sequence(model, gen_norm)
        report.rows.append({
            "id": seq.id,
            "ade": ade(gt_pts, gen_pts),
            "fde": fde(gt_pts, gen_pts),
            "smoothness": smoothness(gen_norm.points),
            "text_sim": cosine_similarity(z, condition),
            "gen_seconds": gen_seconds,
        })
    if retrieval_ks:
        report.retrieval = retrieval_recall(checkpoint, provider, corpus, retrieval_ks)
    report.aggregates = report.recompute_aggregates()
    report.runtime_seconds = time.perf_counter() - t_start
    return report
