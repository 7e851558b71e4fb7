"""Transformer trajectory encoder, displacement decoders, and checkpoints.

The encoder turns per-frame flattened coordinates (optionally combined
additively with projected overlay features) into tokens, prepends a
learned prefix token, adds learned positional embeddings, runs pre-LN
transformer blocks, and reads the latent from the first output token.

The autoregressive decoder is a 3-layer MLP mapping [latent ; flattened
previous positions] to per-frame displacements; the direct decoder is a
separate head emitting all (T-1) displacement frames in one pass. Both
heads always exist so one checkpoint serves either decoding mode (only the
configured one receives gradients during training).

Attention is spelled out with plain linear layers so every forward pass
takes one code path regardless of grad/eval mode; results are bitwise
reproducible for fixed inputs.

Checkpoint container: magic "L2MC", u32 version, u64 manifest length, a
JSON manifest, then raw little-endian tensor bytes. The manifest lists
{name, dtype, shape, offset, nbytes} per tensor in sorted name order (see
README for the full schema). Writing the same state twice is
byte-identical.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .errors import ConfigMismatchError, FormatError, InvalidInputError, ShapeError
from .trajectory import NormalizedTrajectory

CHECKPOINT_MAGIC = b"L2MC"
CHECKPOINT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise InvalidInputError(f"heads ({heads}) must divide model dim ({dim})")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = nn.Linear(dim, dim)
        self.wk = nn.Linear(dim, dim)
        self.wv = nn.Linear(dim, dim)
        self.wo = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, s, d = x.shape
        def split(t):
            return t.view(b, s, self.heads, self.head_dim).transpose(1, 2)
        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        out = torch.softmax(scores, dim=-1) @ v
        return self.wo(out.transpose(1, 2).reshape(b, s, d))


class TransformerBlock(nn.Module):
    """Pre-LN block: x + attn(ln(x)), then x + ff(ln(x))."""

    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, ff_dim)
        self.ff2 = nn.Linear(ff_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff2(torch.relu(self.ff1(self.ln2(x))))


class TrajectoryEncoder(nn.Module):
    def __init__(self, num_points: int, num_frames: int, latent_dim: int,
                 layers: int, heads: int, ff_dim: int):
        super().__init__()
        self.num_points = num_points
        self.num_frames = num_frames
        self.latent_dim = latent_dim
        self.in_proj = nn.Linear(2 * num_points, latent_dim)
        self.overlay_proj = nn.Linear(latent_dim, latent_dim)
        self.prefix_token = nn.Parameter(torch.empty(latent_dim))
        self.pos_embed = nn.Parameter(torch.empty(num_frames + 1, latent_dim))
        nn.init.normal_(self.prefix_token, std=0.02)
        nn.init.normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(latent_dim, heads, ff_dim) for _ in range(layers)
        )

    def forward(self, coords: torch.Tensor, overlay_feats: torch.Tensor | None = None
                ) -> torch.Tensor:
        """coords [B, T, N, 2], overlay_feats [B, T, latent_dim] or None -> [B, latent]."""
        if coords.dim() != 4 or coords.shape[-1] != 2 or coords.shape[2] != self.num_points:
            raise ShapeError(
                f"encoder expects [B, T, {self.num_points}, 2], got {tuple(coords.shape)}"
            )
        b, t = coords.shape[:2]
        if t != self.num_frames:
            raise ShapeError(
                f"encoder built for T={self.num_frames}, got {t} frames"
            )
        if overlay_feats is None:
            # absent overlay features are zero vectors before projection
            overlay_feats = coords.new_zeros((b, t, self.latent_dim))
        elif overlay_feats.shape != (b, t, self.latent_dim):
            raise ShapeError(
                f"overlay features must be [B, T, {self.latent_dim}], "
                f"got {tuple(overlay_feats.shape)}"
            )
        tokens = self.in_proj(coords.reshape(b, t, -1)) + self.overlay_proj(overlay_feats)
        prefix = self.prefix_token.expand(b, 1, -1)
        x = torch.cat([prefix, tokens], dim=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return x[:, 0, :]


class DisplacementDecoder(nn.Module):
    """MLP from [latent ; flattened previous positions] to one displacement frame."""

    def __init__(self, latent_dim: int, num_points: int, hidden_dim: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.num_points = num_points
        self.fc1 = nn.Linear(latent_dim + 2 * num_points, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)
        self.fc3 = nn.Linear(hidden_dim, 2 * num_points)
        # zero output layer: an untrained decoder predicts zero displacement,
        # so generation from a fresh model reproduces the initial grid
        nn.init.zeros_(self.fc3.weight)
        nn.init.zeros_(self.fc3.bias)

    def forward(self, z: torch.Tensor, prev: torch.Tensor) -> torch.Tensor:
        """z [..., latent], prev [..., N, 2] -> displacement [..., N, 2]."""
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"latent dim {z.shape[-1]} != {self.latent_dim}")
        if prev.shape[-2:] != (self.num_points, 2):
            raise ShapeError(
                f"previous positions must end in [{self.num_points}, 2], "
                f"got {tuple(prev.shape)}"
            )
        flat = prev.reshape(*prev.shape[:-2], 2 * self.num_points)
        x = torch.cat([z, flat], dim=-1)
        x = torch.relu(self.fc1(x))
        x = torch.relu(self.fc2(x))
        return self.fc3(x).reshape(prev.shape)


class DirectDecoder(nn.Module):
    """Separate head emitting all T-1 displacement frames in one pass."""

    def __init__(self, latent_dim: int, num_points: int, num_frames: int, hidden_dim: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.num_points = num_points
        self.num_frames = num_frames
        self.fc1 = nn.Linear(latent_dim + 2 * num_points, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)
        self.fc3 = nn.Linear(hidden_dim, (num_frames - 1) * 2 * num_points)
        nn.init.zeros_(self.fc3.weight)
        nn.init.zeros_(self.fc3.bias)

    def forward(self, z: torch.Tensor, p0: torch.Tensor) -> torch.Tensor:
        """z [B, latent], p0 [B, N, 2] -> positions [B, T, N, 2] (frame 0 = p0)."""
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"latent dim {z.shape[-1]} != {self.latent_dim}")
        if p0.shape[-2:] != (self.num_points, 2):
            raise ShapeError(f"p0 must end in [{self.num_points}, 2], got {tuple(p0.shape)}")
        b = p0.shape[0]
        x = torch.cat([z, p0.reshape(b, -1)], dim=-1)
        x = torch.relu(self.fc1(x))
        x = torch.relu(self.fc2(x))
        deltas = self.fc3(x).reshape(b, self.num_frames - 1, self.num_points, 2)
        positions = p0.unsqueeze(1) + torch.cumsum(deltas, dim=1)
        return torch.cat([p0.unsqueeze(1), positions], dim=1)


class TrajectoryModel(nn.Module):
    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        n, t, d = config.num_points, config.num_frames, config.latent_dim
        self.encoder = TrajectoryEncoder(
            n, t, d, config.encoder_layers, config.encoder_heads, config.feedforward_dim
        )
        self.decoder = DisplacementDecoder(d, n, config.decoder_hidden_dim)
        self.direct = DirectDecoder(d, n, t, config.decoder_hidden_dim)

    def encode(self, coords: torch.Tensor, overlay_feats: torch.Tensor | None = None
               ) -> torch.Tensor:
        return self.encoder(coords, overlay_feats)

    def decode_step(self, z: torch.Tensor, prev: torch.Tensor) -> torch.Tensor:
        return self.decoder(z, prev)

    def decode_teacher_forced(self, z: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
        """p̂_t = p_{t-1} + D(z, p_{t-1}) with ground-truth previous frames."""
        if gt.dim() != 4:
            raise ShapeError(f"ground truth must be [B, T, N, 2], got {tuple(gt.shape)}")
        prev = gt[:, :-1]
        z_rep = z.unsqueeze(1).expand(-1, prev.shape[1], -1)
        pred = prev + self.decoder(z_rep, prev)
        return torch.cat([gt[:, :1], pred], dim=1)

    def decode_autoregressive(self, z: torch.Tensor, p0: torch.Tensor, num_frames: int
                              ) -> torch.Tensor:
        """p̂_t = p̂_{t-1} + D(z, p̂_{t-1}), anchored at p̂_0 = p0."""
        if num_frames < 2:
            raise InvalidInputError("autoregressive decoding needs T >= 2")
        frames = [p0]
        current = p0
        for _ in range(num_frames - 1):
            current = current + self.decoder(z, current)
            frames.append(current)
        return torch.stack(frames, dim=1)

    def decode_direct(self, z: torch.Tensor, p0: torch.Tensor, num_frames: int
                      ) -> torch.Tensor:
        if num_frames < 2:
            raise InvalidInputError("direct decoding needs T >= 2")
        if num_frames != self.direct.num_frames:
            raise ShapeError(
                f"direct head emits T={self.direct.num_frames} frames, requested {num_frames}"
            )
        return self.direct(z, p0)

    def decode(self, z: torch.Tensor, p0_or_gt: torch.Tensor, num_frames: int,
               mode: str, teacher_forced: bool = False) -> torch.Tensor:
        if mode == "direct":
            p0 = p0_or_gt[:, 0] if p0_or_gt.dim() == 4 else p0_or_gt
            return self.decode_direct(z, p0, num_frames)
        if teacher_forced:
            return self.decode_teacher_forced(z, p0_or_gt)
        return self.decode_autoregressive(z, p0_or_gt, num_frames)


def build_model(config: RunConfig, dtype: torch.dtype = torch.float32,
                seed: int | None = None) -> TrajectoryModel:
    """Construct a model; ``seed`` fixes the parameter initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    model = TrajectoryModel(config)
    if dtype != torch.float32:
        model = model.to(dtype)
    return model


# ---------------------------------------------------------------------------
# NormalizedTrajectory-level wrappers used by inference and evaluation.


def _as_batch(traj_points: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.as_tensor(np.asarray(traj_points), dtype=dtype).unsqueeze(0)


def encode_sequence(model: TrajectoryModel, traj: NormalizedTrajectory,
                    overlay_feats: np.ndarray | list | None = None) -> np.ndarray:
    """Latent vector of one normalized trajectory (no grad)."""
    dtype = next(model.parameters()).dtype
    coords = _as_batch(traj.points, dtype)
    feats = None
    if overlay_feats is not None:
        feats = torch.as_tensor(np.asarray(overlay_feats), dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        z = model.encode(coords, feats)
    return z.squeeze(0).numpy()


def decode_sequence(model: TrajectoryModel, z: np.ndarray, p0: np.ndarray,
                    num_frames: int, mode: str) -> NormalizedTrajectory:
    """Decode a latent into a normalized trajectory from initial points p0."""
    dtype = next(model.parameters()).dtype
    zt = torch.as_tensor(np.asarray(z), dtype=dtype).unsqueeze(0)
    p0t = torch.as_tensor(np.asarray(p0), dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        if mode == "direct":
            out = model.decode_direct(zt, p0t, num_frames)
        elif mode == "autoregressive":
            out = model.decode_autoregressive(zt, p0t, num_frames)
        else:
            raise InvalidInputError(f"unknown decode mode {mode!r}")
    return NormalizedTrajectory.from_points(
        out.squeeze(0).to(torch.float64).numpy(), strict_range=False
    )


# ---------------------------------------------------------------------------
# Checkpoints.


@dataclass
class Checkpoint:
    config: RunConfig
    tensors: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0
    kind: str = "checkpoint"
    extra: dict = field(default_factory=dict)
    _model_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def build_model(self, dtype: torch.dtype = torch.float32) -> TrajectoryModel:
        """Instantiate the model and load stored tensors, validating shapes."""
        model = build_model(self.config, seed=self.seed)
        expected = {name: tuple(p.shape) for name, p in model.state_dict().items()}
        stored = {name: arr.shape for name, arr in self.tensors.items()
                  if not name.startswith("opt.")}
        if expected.keys() != stored.keys():
            missing = sorted(expected.keys() - stored.keys())
            surplus = sorted(stored.keys() - expected.keys())
            raise ShapeError(
                f"checkpoint/config parameter mismatch: missing {missing[:3]}, "
                f"unexpected {surplus[:3]}"
            )
        for name, shape in expected.items():
            if stored[name] != shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {stored[name]} != "
                    f"config shape {shape}"
                )
        state = {
            name: torch.as_tensor(self.tensors[name]) for name in expected
        }
        model.load_state_dict(state)
        if dtype != torch.float32:
            model = model.to(dtype)
        return model

    def cached_model(self, dtype: torch.dtype = torch.float32) -> TrajectoryModel:
        key = str(dtype)
        if key not in self._model_cache:
            self._model_cache[key] = self.build_model(dtype)
        return self._model_cache[key]


def model_state_numpy(model: nn.Module) -> dict[str, np.ndarray]:
    return {name: t.detach().cpu().numpy().copy() for name, t in model.state_dict().items()}


def checkpoint_from_model(model: TrajectoryModel, config: RunConfig, step: int = 0,
                          seed: int | None = None, kind: str = "checkpoint",
                          extra: dict | None = None) -> Checkpoint:
    return Checkpoint(
        config=config,
        tensors=model_state_numpy(model),
        step=step,
        seed=config.seed if seed is None else seed,
        kind=kind,
        extra=dict(extra or {}),
    )


def _dtype_name(arr: np.ndarray) -> str:
    for name, code in _DTYPES.items():
        if np.dtype(code) == arr.dtype.newbyteorder("<"):
            return name
    raise InvalidInputError(f"unsupported tensor dtype {arr.dtype}")


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Serialize deterministically: same state in, same bytes out."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name])
        dtype_name = _dtype_name(arr)
        data = arr.astype(_DTYPES[dtype_name]).tobytes()
        entries.append({
            "name": name,
            "dtype": dtype_name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(data),
        })
        blobs.append(data)
        offset += len(data)
    manifest = {
        "kind": ckpt.kind,
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "seed": ckpt.seed,
        "extra": ckpt.extra,
        "tensors": entries,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(mbytes)))
        fh.write(mbytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<Q", data, 8)
    if 16 + mlen > len(data):
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt manifest ({exc})") from exc
    base = 16 + mlen
    tensors = {}
    expected_end = base
    for entry in manifest["tensors"]:
        code = _DTYPES.get(entry["dtype"])
        if code is None:
            raise FormatError(f"{path}: unknown tensor dtype {entry['dtype']!r}")
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(data):
            raise FormatError(f"{path}: tensor {entry['name']!r} exceeds file size")
        arr = np.frombuffer(data, dtype=code, count=int(np.prod(entry["shape"], dtype=np.int64))
                            if entry["shape"] else 1, offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
        expected_end = max(expected_end, end)
    if expected_end != len(data):
        raise FormatError(f"{path}: {len(data) - expected_end} trailing bytes")
    try:
        config = RunConfig.from_dict(manifest["config"])
    except (TypeError, KeyError) as exc:
        raise FormatError(f"{path}: invalid config in manifest ({exc})") from exc
    return Checkpoint(
        config=config,
        tensors=tensors,
        step=int(manifest["step"]),
        seed=int(manifest["seed"]),
        kind=manifest.get("kind", "checkpoint"),
        extra=manifest.get("extra", {}),
    )


def ensure_config_compatible(stored: RunConfig, requested: RunConfig) -> None:
    """Raise if two configs disagree on any architecture-relevant field."""
    arch_fields = (
        "grid_rows", "grid_cols", "num_frames", "latent_dim", "encoder_layers",
        "encoder_heads", "feedforward_dim", "decoder_hidden_dim",
    )
    diffs = [
        f"{name}: checkpoint={getattr(stored, name)} requested={getattr(requested, name)}"
        for name in arch_fields
        if getattr(stored, name) != getattr(requested, name)
    ]
    if diffs:
        raise ConfigMismatchError("; ".join(diffs))
