"""End-to-end training: teacher-forced reconstruction, the dual
text-decoding pass, joint-space alignment losses, and AdamW updates.

Determinism contract: (seed, data, config) fully determine the trained
parameters. Parameter init is seeded through torch, epoch shuffling
through a serialized numpy generator, and embeddings/overlays are
precomputed once per corpus, so two runs produce bitwise-identical loss
histories. Train states save at epoch boundaries; resuming reproduces the
uninterrupted run exactly.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .embedding import pool_image_embeddings
from .errors import InvalidInputError, NonFiniteLossError, ShapeError
from .losses import (
    LossBreakdown,
    active_weights,
    loss_image,
    loss_recon,
    loss_range,
    loss_text,
    loss_text_recon,
    loss_total,
    loss_vel,
)
from .model import Checkpoint, TrajectoryModel, build_model, checkpoint_from_model, \
    ensure_config_compatible, load_checkpoint, model_state_numpy, save_checkpoint
from .overlay import OverlayStyle, render_sequence
from .trajectory import TrajectorySequence, normalize

logger = logging.getLogger(__name__)


@dataclass
class PreparedCorpus:
    """Per-sequence tensors assembled once before the epoch loop."""

    coords: torch.Tensor          # [M, T, N, 2] float32, normalized units
    text_embs: torch.Tensor       # [M, D]
    overlay_feats: torch.Tensor | None   # [M, T, D] or None
    pooled_image_embs: torch.Tensor | None  # [M, D] or None
    ids: list[str]


def overlay_style_from_config(config: RunConfig) -> OverlayStyle:
    return OverlayStyle(
        color=config.overlay_color,
        opacity=config.overlay_opacity,
        point_radius_px=config.overlay_point_radius,
        line_width_px=config.overlay_line_width,
    )


def compute_overlay_features(seq: TrajectorySequence, provider,
                             style: OverlayStyle) -> np.ndarray:
    """Render the sequence on white and embed every frame; [T, dim] float32."""
    frames = render_sequence(seq, None, style)
    return np.stack([provider.embed_image(f) for f in frames]).astype(np.float32)


def prepare_corpus(corpus: list[TrajectorySequence], config: RunConfig, provider,
                   overlay_bank: dict[str, np.ndarray] | None = None) -> PreparedCorpus:
    """Normalize trajectories and precompute all frozen embeddings."""
    if not corpus:
        raise InvalidInputError("corpus is empty")
    t, n = config.num_frames, config.num_points
    coords = []
    for seq in corpus:
        if seq.num_frames != t or seq.num_points != n:
            raise ShapeError(
                f"sequence {seq.id!r} is {seq.num_frames}x{seq.num_points}, "
                f"config expects {t}x{n}"
            )
        coords.append(normalize(seq).points.astype(np.float32))

    text_embs = np.stack([provider.embed_text(seq.captions[0]) for seq in corpus])
    if text_embs.shape[1] != config.latent_dim:
        raise ShapeError(
            f"provider dim {text_embs.shape[1]} != latent_dim {config.latent_dim}"
        )

    needs_overlays = config.use_overlay_features or config.use_image
    overlay_feats = pooled = None
    if needs_overlays:
        style = overlay_style_from_config(config)
        feats = []
        for seq in corpus:
            if overlay_bank is not None and seq.id in overlay_bank:
                f = np.asarray(overlay_bank[seq.id], dtype=np.float32)
                if f.shape != (t, config.latent_dim):
                    raise ShapeError(
                        f"overlay features for {seq.id!r} have shape {f.shape}, "
                        f"expected {(t, config.latent_dim)}"
                    )
            else:
                f = compute_overlay_features(seq, provider, style)
            feats.append(f)
        overlay_arr = np.stack(feats)
        overlay_feats = torch.from_numpy(overlay_arr) if config.use_overlay_features else None
        if config.use_image:
            pooled = torch.from_numpy(
                np.stack([pool_image_embeddings(list(f)) for f in feats])
            )

    return PreparedCorpus(
        coords=torch.from_numpy(np.stack(coords)),
        text_embs=torch.from_numpy(text_embs.astype(np.float32)),
        overlay_feats=overlay_feats,
        pooled_image_embs=pooled,
        ids=[seq.id for seq in corpus],
    )


def forward_losses(model: TrajectoryModel, coords: torch.Tensor,
                   overlay_feats: torch.Tensor | None, text_embs: torch.Tensor,
                   pooled_image_embs: torch.Tensor | None,
                   config: RunConfig) -> dict[str, torch.Tensor]:
    """Compute the active loss terms for one batch (all tensors batched)."""
    weights = active_weights(config)
    needs_decode = any(weights[k] > 0 for k in ("recon", "vel", "range"))
    needs_encode = needs_decode or weights["text"] > 0 or weights["image"] > 0

    components: dict[str, torch.Tensor] = {}
    if needs_encode:
        z = model.encode(coords, overlay_feats)
        if needs_decode:
            pred = model.decode(z, coords, config.num_frames, config.decode_mode,
                                teacher_forced=True)
            if weights["recon"] > 0:
                components["recon"] = loss_recon(coords, pred, config.recon_norm)
            if weights["vel"] > 0:
                components["vel"] = loss_vel(coords, pred)
            if weights["range"] > 0:
                components["range"] = loss_range(coords, pred)
        if weights["text"] > 0:
            components["text"] = loss_text(z, text_embs)
        if weights["image"] > 0:
            if pooled_image_embs is None:
                raise InvalidInputError("image loss enabled but no pooled image embeddings")
            components["image"] = loss_image(z, pooled_image_embs)
    if weights["text_recon"] > 0:
        pred_text = model.decode(text_embs, coords, config.num_frames, config.decode_mode,
                                 teacher_forced=True)
        components["text_recon"] = loss_text_recon(coords, pred_text)
    return components


@dataclass
class TrainState:
    model: TrajectoryModel
    optimizer: torch.optim.AdamW
    config: RunConfig
    step: int = 0
    rng: np.random.Generator = dataclass_field(default_factory=np.random.default_rng)
    loss_history: list[LossBreakdown] = dataclass_field(default_factory=list)


def make_optimizer(model: TrajectoryModel, config: RunConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )


def init_train_state(config: RunConfig) -> TrainState:
    model = build_model(config, seed=config.seed)
    return TrainState(
        model=model,
        optimizer=make_optimizer(model, config),
        config=config,
        rng=np.random.default_rng(config.seed),
    )


def train_step(state: TrainState, coords: torch.Tensor,
               overlay_feats: torch.Tensor | None, text_embs: torch.Tensor,
               pooled_image_embs: torch.Tensor | None) -> LossBreakdown:
    """One forward/backward/update pass over a batch; returns batch-mean losses."""
    if coords.shape[0] == 0:
        raise InvalidInputError("empty batch")
    config = state.config
    state.model.train()
    components = forward_losses(state.model, coords, overlay_feats, text_embs,
                                pooled_image_embs, config)
    for name, value in components.items():
        if not torch.isfinite(value):
            raise NonFiniteLossError(
                f"loss term {name!r} is non-finite at step {state.step}"
            )
    weights = active_weights(config)
    total = sum(weights[name] * value for name, value in components.items())
    if isinstance(total, torch.Tensor):
        total.backward()
        if config.grad_clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(
                [p for p in state.model.parameters() if p.grad is not None],
                config.grad_clip_norm,
            )
        state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step += 1
    breakdown = loss_total({k: float(v.detach()) for k, v in components.items()}, config)
    state.loss_history.append(breakdown)
    return breakdown


def _batches(n: int, batch_size: int, perm: np.ndarray):
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def run_training(
    corpus: list[TrajectorySequence],
    config: RunConfig,
    provider,
    out_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    resume: TrainState | None = None,
    overlay_bank: dict[str, np.ndarray] | None = None,
) -> TrainState:
    """Run (or continue) training for ``config.epochs`` total epochs."""
    prepared = prepare_corpus(corpus, config, provider, overlay_bank=overlay_bank)
    n = len(prepared.ids)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size

    if resume is not None:
        ensure_config_compatible(resume.config, config)
        state = resume
        state.config = config  # allows extending epochs; architecture checked above
        for group in state.optimizer.param_groups:
            group["lr"] = config.learning_rate
            group["betas"] = (config.adam_beta1, config.adam_beta2)
            group["eps"] = config.adam_eps
            group["weight_decay"] = config.weight_decay
        if state.step % steps_per_epoch != 0:
            raise InvalidInputError(
                "resume states are saved at epoch boundaries; "
                f"step {state.step} is mid-epoch for {steps_per_epoch} steps/epoch"
            )
    else:
        state = init_train_state(config)
    start_epoch = state.step // steps_per_epoch if steps_per_epoch else 0

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(start_epoch, config.epochs):
            perm = state.rng.permutation(n)
            t0 = time.perf_counter()
            for batch_idx in _batches(n, config.batch_size, perm):
                idx = torch.as_tensor(np.ascontiguousarray(batch_idx))
                breakdown = train_step(
                    state,
                    prepared.coords[idx],
                    prepared.overlay_feats[idx] if prepared.overlay_feats is not None else None,
                    prepared.text_embs[idx],
                    prepared.pooled_image_embs[idx]
                    if prepared.pooled_image_embs is not None else None,
                )
                if log_fh is not None:
                    rec = {"step": state.step, "epoch": epoch}
                    rec.update(breakdown.to_dict())
                    log_fh.write(json.dumps(rec) + "\n")
            logger.info(
                "epoch %d/%d total=%.6f (%.2fs)", epoch + 1, config.epochs,
                state.loss_history[-1].total, time.perf_counter() - t0,
            )
            if out is not None and config.checkpoint_every > 0 \
                    and (epoch + 1) % config.checkpoint_every == 0 \
                    and (epoch + 1) < config.epochs:
                save_train_state(state, out / f"state_epoch{epoch + 1:04d}.l2mc")
    finally:
        if log_fh is not None:
            log_fh.close()
    if out is not None:
        save_checkpoint(to_checkpoint(state), out / "final.l2mc")
        save_train_state(state, out / "state_final.l2mc")
    return state


def train(
    corpus: list[TrajectorySequence],
    config: RunConfig,
    provider,
    out_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    overlay_bank: dict[str, np.ndarray] | None = None,
) -> Checkpoint:
    """Train from scratch and return the final checkpoint."""
    state = run_training(corpus, config, provider, out_dir=out_dir, log_path=log_path,
                         overlay_bank=overlay_bank)
    return to_checkpoint(state)


# ---------------------------------------------------------------------------
# Train-state serialization (parameters + optimizer moments + rng + history).


def to_checkpoint(state: TrainState) -> Checkpoint:
    return checkpoint_from_model(state.model, state.config, step=state.step,
                                 seed=state.config.seed)


def save_train_state(state: TrainState, path: str | Path) -> None:
    tensors = model_state_numpy(state.model)
    opt_steps = {}
    named = dict(state.model.named_parameters())
    for name, param in named.items():
        opt_state = state.optimizer.state.get(param)
        if not opt_state:
            continue
        tensors[f"opt.{name}.exp_avg"] = opt_state["exp_avg"].detach().numpy().copy()
        tensors[f"opt.{name}.exp_avg_sq"] = opt_state["exp_avg_sq"].detach().numpy().copy()
        opt_steps[name] = float(opt_state["step"])
    ckpt = Checkpoint(
        config=state.config,
        tensors=tensors,
        step=state.step,
        seed=state.config.seed,
        kind="train_state",
        extra={
            "opt_steps": opt_steps,
            "rng_state": state.rng.bit_generator.state,
            "loss_history": [b.to_dict() for b in state.loss_history],
        },
    )
    save_checkpoint(ckpt, path)


def load_train_state(path: str | Path) -> TrainState:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "train_state":
        raise InvalidInputError(f"{path} holds a plain checkpoint, not a train state")
    model = ckpt.build_model()
    optimizer = make_optimizer(model, ckpt.config)
    named = dict(model.named_parameters())
    opt_steps = ckpt.extra.get("opt_steps", {})
    for name, param in named.items():
        key = f"opt.{name}.exp_avg"
        if key not in ckpt.tensors:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(opt_steps.get(name, 0.0))),
            "exp_avg": torch.as_tensor(ckpt.tensors[key]).clone(),
            "exp_avg_sq": torch.as_tensor(ckpt.tensors[f"opt.{name}.exp_avg_sq"]).clone(),
        }
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.extra["rng_state"]
    return TrainState(
        model=model,
        optimizer=optimizer,
        config=ckpt.config,
        step=ckpt.step,
        rng=rng,
        loss_history=[LossBreakdown.from_dict(d) for d in ckpt.extra.get("loss_history", [])],
    )
