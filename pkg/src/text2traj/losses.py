"""Training losses and the weighted total objective.

All loss functions accept [T, N, 2] arrays or tensors, or batched
[B, T, N, 2] inputs (batched calls return the batch mean). They are
differentiable torch expressions so gradients flow to the model.

Conventions pinned here because the norms are otherwise ambiguous:
reconstruction sums absolute (or squared) differences over both
coordinates and divides by N*T; the velocity loss divides by N*(T-1); the
range loss is summed, not averaged, over frames. Max/min in the range
loss route gradients through the first attaining point index.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import RunConfig
from .errors import InvalidInputError, ShapeError

LOSS_NAMES = ("recon", "vel", "range", "text", "image", "text_recon")


def _pair(p, p_hat) -> tuple[torch.Tensor, torch.Tensor]:
    p = torch.as_tensor(p)
    p_hat = torch.as_tensor(p_hat)
    if p.shape != p_hat.shape:
        raise ShapeError(f"trajectory shapes differ: {tuple(p.shape)} vs {tuple(p_hat.shape)}")
    if p.dim() == 3:
        p, p_hat = p.unsqueeze(0), p_hat.unsqueeze(0)
    if p.dim() != 4 or p.shape[-1] != 2:
        raise ShapeError(f"expected [T, N, 2] or [B, T, N, 2], got {tuple(p.shape)}")
    return p, p_hat


def loss_recon(p, p_hat, norm: str = "L1") -> torch.Tensor:
    """Mean reconstruction error, 1/(N*T) * sum_t |p_t - p̂_t| (or squared)."""
    p, p_hat = _pair(p, p_hat)
    _, t, n, _ = p.shape
    diff = p - p_hat
    if norm == "L1":
        per_item = diff.abs().sum(dim=(1, 2, 3)) / (n * t)
    elif norm == "L2":
        per_item = diff.square().sum(dim=(1, 2, 3)) / (n * t)
    else:
        raise InvalidInputError(f"norm must be 'L1' or 'L2', got {norm!r}")
    return per_item.mean()


def loss_vel(p, p_hat) -> torch.Tensor:
    """Squared error between frame-to-frame velocities, over N*(T-1)."""
    p, p_hat = _pair(p, p_hat)
    _, t, n, _ = p.shape
    if t < 2:
        raise InvalidInputError("velocity loss needs T >= 2 frames")
    dv = (p[:, 1:] - p[:, :-1]) - (p_hat[:, 1:] - p_hat[:, :-1])
    return (dv.square().sum(dim=(1, 2, 3)) / (n * (t - 1))).mean()


def _coord_range(p: torch.Tensor) -> torch.Tensor:
    # max/min over points; torch.max picks the first attaining index on ties
    hi = p.max(dim=2).values
    lo = p.min(dim=2).values
    return hi - lo  # [B, T, 2]


def loss_range(p, p_hat) -> torch.Tensor:
    """Squared mismatch of per-frame (x, y) coordinate ranges, summed over frames."""
    p, p_hat = _pair(p, p_hat)
    dr = _coord_range(p) - _coord_range(p_hat)
    return dr.square().sum(dim=(1, 2)).mean()


def _cosine_loss(z: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
    z = torch.as_tensor(z)
    emb = torch.as_tensor(emb)
    if z.dim() == 1:
        z, emb = z.unsqueeze(0), emb.unsqueeze(0)
    if z.shape != emb.shape or z.dim() != 2:
        raise ShapeError(f"embedding shapes differ: {tuple(z.shape)} vs {tuple(emb.shape)}")
    zn = z.norm(dim=1)
    en = emb.norm(dim=1)
    if (zn == 0).any() or (en == 0).any():
        raise InvalidInputError("cosine loss of a zero-norm vector")
    cos = (z * emb).sum(dim=1) / (zn * en)
    return (1.0 - cos).mean()


def loss_text(z_p, text_emb) -> torch.Tensor:
    """1 - cos(text embedding, trajectory latent); range [0, 2]."""
    return _cosine_loss(z_p, text_emb)


def loss_image(z_p, pooled_image_emb) -> torch.Tensor:
    """1 - cos(pooled overlay-image embedding, trajectory latent)."""
    return _cosine_loss(z_p, pooled_image_emb)


def loss_text_recon(p, p_hat_text) -> torch.Tensor:
    """L1 reconstruction error of the trajectory decoded from the text embedding."""
    return loss_recon(p, p_hat_text, norm="L1")


@dataclass(frozen=True)
class LossBreakdown:
    recon: float = 0.0
    vel: float = 0.0
    range: float = 0.0
    text: float = 0.0
    image: float = 0.0
    text_recon: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in (*LOSS_NAMES, "total")}

    @classmethod
    def from_dict(cls, d: dict) -> "LossBreakdown":
        return cls(**{k: float(v) for k, v in d.items()})


def loss_toggles(config: RunConfig) -> dict[str, bool]:
    return {
        "recon": config.use_recon,
        "vel": config.use_vel,
        "range": config.use_range,
        "text": config.use_text,
        "image": config.use_image,
        "text_recon": config.use_text_recon,
    }


def active_weights(config: RunConfig) -> dict[str, float]:
    """Per-term weights under the config's lambda values and toggles."""
    weights = {
        "recon": 1.0,
        "vel": config.lambda_vel,
        "range": config.lambda_range,
        "text": config.lambda_text,
        "image": config.lambda_image,
        "text_recon": config.lambda_text_recon,
    }
    for name, lam in weights.items():
        if lam < 0:
            raise InvalidInputError(f"negative loss weight for {name!r}")
    toggles = loss_toggles(config)
    return {name: (weights[name] if toggles[name] else 0.0) for name in LOSS_NAMES}


def weighted_total(components: dict[str, torch.Tensor], config: RunConfig) -> torch.Tensor:
    """Differentiable weighted sum of the supplied loss terms."""
    weights = active_weights(config)
    total = None
    for name, value in components.items():
        if name not in weights:
            raise InvalidInputError(f"unknown loss term {name!r}")
        w = weights[name]
        if w == 0.0:
            continue
        term = w * value
        total = term if total is None else total + term
    if total is None:
        total = torch.zeros(())
    return total


def loss_total(components: dict[str, float], config: RunConfig) -> LossBreakdown:
    """Combine component values into a breakdown with the weighted total.

    Missing or toggled-off terms contribute 0 to the total and are reported
    as 0 in the breakdown.
    """
    weights = active_weights(config)
    toggles = loss_toggles(config)
    unknown = components.keys() - set(LOSS_NAMES)
    if unknown:
        raise InvalidInputError(f"unknown loss terms {sorted(unknown)}")
    reported = {
        name: (float(components[name]) if name in components and toggles[name] else 0.0)
        for name in LOSS_NAMES
    }
    total = sum(weights[name] * reported[name] for name in LOSS_NAMES)
    return LossBreakdown(**reported, total=total)
