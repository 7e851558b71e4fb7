"""text2traj: text-conditioned 2D point-trajectory generation.

A transformer auto-encoder maps point trajectories into a frozen joint
text-image embedding space; an autoregressive displacement decoder maps
conditioning vectors (text embeddings, pooled image embeddings, or edited
latents) back to explicit trajectories.
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config, save_config
from .dataio import (
    read_corpus,
    read_embedding_cache,
    split_corpus,
    write_corpus,
    write_embedding_cache,
)
from .embedding import (
    CachedEmbeddingProvider,
    StubEmbeddingProvider,
    cached_embed,
    cosine_similarity,
    pool_image_embeddings,
    stub_embed_text,
)
from .errors import (
    CacheKeyError,
    ConfigMismatchError,
    FormatError,
    InvalidInputError,
    NonFiniteLossError,
    ParseError,
    ShapeError,
    Text2TrajError,
    ValidationError,
)
from .evalkit import EvalReport, ade, text_sim, evaluate_generation, fde, \
    retrieval_recall, smoothness
from .inference import (
    classify_zero_shot,
    condition_from_image,
    condition_from_overlay,
    condition_from_text,
    generate,
    interpolate,
    style_transfer,
)
from .losses import (
    LossBreakdown,
    loss_image,
    loss_range,
    loss_recon,
    loss_text,
    loss_text_recon,
    loss_total,
    loss_vel,
)
from .model import Checkpoint, TrajectoryModel, build_model, load_checkpoint, \
    save_checkpoint
from .overlay import OverlayStyle, RasterFrame, render_overlay, render_sequence
from .synth import MOTION_CLASSES, synth_corpus
from .trajectory import (
    GridSpec,
    NormalizedTrajectory,
    TrajectorySequence,
    denormalize,
    init_grid,
    normalize,
)
from .training import TrainState, load_train_state, run_training, save_train_state, \
    train, train_step
