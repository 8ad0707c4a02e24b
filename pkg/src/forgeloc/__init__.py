"""Weakly supervised audio-visual temporal forgery localization.

Video-level labels in, per-segment forgery proposals out: attention
based feature enhancement, multitask classification heads with a
temporal deviation objective, and an expert gate that routes inference
to the right stream.
"""

from .core_data import (
    FeatureSequence,
    ForgeryLabel,
    ManifestEntry,
    PredictionRecord,
    SegmentAnnotation,
    VideoSample,
    align_audio,
    derive_binary_labels,
    load_feature_file,
    load_manifest,
    load_predictions,
    load_sample,
    save_feature_file,
    save_manifest,
    save_predictions,
)
from .enhance import EnhanceParams, TppaParams, enhance_all, intra_enhance, inter_enhance, tppa_weights
from .errors import (
    AlignmentError,
    ConfigError,
    DomainError,
    ForgelocError,
    FormatError,
    NumericError,
    OracleScopeError,
    ShapeError,
    UpsampleError,
)
from .losses import (
    DeviationConfig,
    LossWeights,
    bce,
    cross_entropy,
    deviation_loss,
    deviation_measure,
    temporal_deviation,
    total_loss,
)
from .metrics import EvalConfig, accuracy, average_precision, average_recall, map_grid, oracle_eval
from .model import InferenceResult, ModelParams, forward, infer, localize, aggregate, select_expert
from .proposals import SegmentProposal, fas_to_proposals, nms, temporal_iou
from .synthgen import SynthConfig, corpus_deviation_report, generate_corpus, generate_samples
from .train import (
    Checkpoint,
    TrainConfig,
    TrainResult,
    grad_batch,
    gradcheck,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)

__version__ = "0.1.0"
