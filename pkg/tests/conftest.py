import numpy as np
import pytest

from text2traj.config import RunConfig
from text2traj.trajectory import TrajectorySequence


def tiny_config(**overrides) -> RunConfig:
    """Small fast config used across tests."""
    base = dict(
        grid_rows=2,
        grid_cols=2,
        num_frames=5,
        latent_dim=16,
        encoder_layers=1,
        encoder_heads=2,
        feedforward_dim=32,
        decoder_hidden_dim=32,
        batch_size=4,
        epochs=2,
        learning_rate=1e-3,
        seed=0,
        use_image=False,
        use_overlay_features=False,
    )
    base.update(overrides)
    return RunConfig(**base)


def make_sequence(seed=0, num_frames=5, rows=2, cols=2, width=64, height=48,
                  caption="object moving right", seq_id="seq"):
    rng = np.random.default_rng(seed)
    n = rows * cols
    start = rng.uniform([5, 5], [width - 20, height - 20], size=(n, 2))
    drift = rng.uniform(-1.0, 1.5, size=(1, n, 2))
    pts = start[None] + drift * np.arange(num_frames)[:, None, None]
    pts = np.clip(pts, 0, [width, height])
    return TrajectorySequence(
        id=f"{seq_id}-{seed}",
        width_px=width,
        height_px=height,
        points_px=pts,
        captions=[caption],
        grid_rows=rows,
        grid_cols=cols,
    )


@pytest.fixture
def tiny_cfg():
    return tiny_config()
