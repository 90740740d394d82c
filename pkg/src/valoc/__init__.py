"""Visual answer localization with dual span predictors and cross-modal
mutual transfer, plus a synthetic corpus generator and training engine."""

from .data import (
    CorpusError,
    FrameSpan,
    Sample,
    Subtitle,
    TokenLayout,
    TokenSpan,
    load_corpus,
    save_corpus,
    token_layout,
    validate_sample,
)
from .engine import (
    AblationResult,
    ManifestMismatchError,
    TrainConfig,
    TrainingDivergedError,
    TrainReport,
    ablate,
    alpha_beta_trace,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .network import CrossModalSpanNet, ModelConfig, NoTextTargetError, SpanLogits
from .objective import LossBundle, TransferState, decode_span, span_ce, total_loss
from .synthgen import GenConfig, generate_corpus, split_corpus
from .timeline import (
    MetricsReport,
    SubtitleSpan,
    TimelineTable,
    build_table,
    compute_metrics,
    frame_to_subtitle,
    index_iou,
    subtitle_to_frame,
    temporal_iou,
)

__version__ = "0.1.0"
