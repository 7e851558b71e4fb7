"""Run configuration with file I/O.

Defaults reproduce the reference training setup: 6x6 grid over 30 frames,
latent dimension 512, a 4-layer/4-head encoder with feedforward width 1024,
AdamW at learning rate 1e-4, batch size 32, 200 epochs, and loss weights
vel=0.01, range=0.1, text=0.1, image=0.1, text_recon=0.5.

Config files are plain ``key = value`` lines ('#' starts a comment).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidInputError, ParseError

RECON_NORMS = ("L1", "L2")
DECODE_MODES = ("autoregressive", "direct")
PROVIDERS = ("stub", "cache")


@dataclass
class RunConfig:
    # geometry
    grid_rows: int = 6
    grid_cols: int = 6
    num_frames: int = 30
    # architecture
    latent_dim: int = 512
    encoder_layers: int = 4
    encoder_heads: int = 4
    feedforward_dim: int = 1024
    decoder_hidden_dim: int = 1024
    # objective
    recon_norm: str = "L1"
    decode_mode: str = "autoregressive"
    lambda_vel: float = 0.01
    lambda_range: float = 0.1
    lambda_text: float = 0.1
    lambda_image: float = 0.1
    lambda_text_recon: float = 0.5
    use_recon: bool = True
    use_vel: bool = True
    use_range: bool = True
    use_text: bool = True
    use_image: bool = True
    use_text_recon: bool = True
    use_overlay_features: bool = True
    # optimization
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip_norm: float = 1.0  # 0 disables clipping
    checkpoint_every: int = 0  # epochs between saved train states; 0 = final only
    # embedding provider
    provider: str = "stub"
    provider_seed: int = 0
    # overlay rendering
    overlay_color: tuple[int, int, int] = (0, 255, 255)
    overlay_opacity: float = 0.5
    overlay_point_radius: int = 2
    overlay_line_width: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("grid_rows", "grid_cols", "num_frames", "latent_dim",
                     "encoder_layers", "encoder_heads", "feedforward_dim",
                     "decoder_hidden_dim", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"config {name} must be >= 1")
        if self.num_frames < 2:
            raise InvalidInputError("config num_frames must be >= 2")
        if self.latent_dim % self.encoder_heads != 0:
            raise InvalidInputError(
                f"encoder_heads ({self.encoder_heads}) must divide "
                f"latent_dim ({self.latent_dim})"
            )
        if self.recon_norm not in RECON_NORMS:
            raise InvalidInputError(f"recon_norm must be one of {RECON_NORMS}")
        if self.decode_mode not in DECODE_MODES:
            raise InvalidInputError(f"decode_mode must be one of {DECODE_MODES}")
        if self.provider not in PROVIDERS:
            raise InvalidInputError(f"provider must be one of {PROVIDERS}")
        for name in ("lambda_vel", "lambda_range", "lambda_text", "lambda_image",
                     "lambda_text_recon"):
            if getattr(self, name) < 0.0:
                raise InvalidInputError(f"config {name} must be non-negative")
        if self.learning_rate < 0.0:
            raise InvalidInputError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be non-negative")
        if self.weight_decay < 0.0 or self.grad_clip_norm < 0.0:
            raise InvalidInputError("weight_decay and grad_clip_norm must be non-negative")
        color = tuple(int(c) for c in self.overlay_color)
        if len(color) != 3 or any(c < 0 or c > 255 for c in color):
            raise InvalidInputError("overlay_color must be an RGB byte triple")
        self.overlay_color = color
        if not 0.0 < self.overlay_opacity <= 1.0:
            raise InvalidInputError("overlay_opacity must lie in (0, 1]")
        if self.overlay_point_radius < 1 or self.overlay_line_width < 1:
            raise InvalidInputError("overlay radius/width must be >= 1")

    @property
    def num_points(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def coord_dim(self) -> int:
        """Flattened per-frame coordinate width (2N)."""
        return 2 * self.num_points

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["overlay_color"] = list(self.overlay_color)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = d.keys() - known
        if unknown:
            raise ParseError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "overlay_color" in d:
            d["overlay_color"] = tuple(int(c) for c in d["overlay_color"])
        return cls(**d)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(name: str, text: str, target_type):
    text = text.strip()
    try:
        if target_type is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if target_type is str:
            return text
        # the only tuple field is the RGB color
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ParseError(f"config key {name!r}: {exc}") from exc


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_TYPE_MAP = {"int": int, "float": float, "str": str, "bool": bool}


def _field_type(name: str):
    t = _FIELD_TYPES[name]
    if isinstance(t, str):
        return _TYPE_MAP.get(t, tuple)
    return t


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines on top of ``base`` (or the defaults)."""
    out = dataclasses.asdict(base) if base is not None else {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"config line {lineno}: expected 'key = value'")
        name, value = (part.strip() for part in line.split("=", 1))
        if name not in _FIELD_TYPES:
            raise ParseError(f"config line {lineno}: unknown key {name!r}")
        out[name] = _parse_value(name, value, _field_type(name))
    if "overlay_color" in out:
        out["overlay_color"] = tuple(out["overlay_color"])
    return RunConfig(**out)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base=base)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    lines = [
        f"{f.name} = {_format_value(getattr(cfg, f.name))}"
        for f in dataclasses.fields(RunConfig)
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Apply CLI ``key=value`` overrides on top of a config."""
    values = dataclasses.asdict(cfg)
    for name, text in overrides.items():
        if name not in _FIELD_TYPES:
            raise ParseError(f"unknown config key {name!r}")
        values[name] = _parse_value(name, text, _field_type(name))
    values["overlay_color"] = tuple(values["overlay_color"])
    return RunConfig(**values)
