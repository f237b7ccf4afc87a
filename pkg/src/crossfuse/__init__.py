"""Cross-attention fusion of per-frame visual embeddings and 3D skeletons."""

from .feature_io import (
    ClipRecord,
    DatasetManifest,
    FeatureSequence,
    Modality,
    Split,
    load_manifest,
    read_sequence,
    save_manifest,
    write_sequence,
)
from .metrics import PredictionSet, aggregate_seeds, evaluate_predictions, macro_f1, macro_map, top1_accuracy
from .model import (
    CrossAttentionFusionModel,
    EarlyFusionModel,
    LateFusionPair,
    ModelConfig,
    UnimodalProbe,
    build_model,
)
from .preprocess import AlignedClip, SampleMode, TsnPlan, align_clip, normalize_skeleton, tsn_sample
from .train import TrainConfig, evaluate_model, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "AlignedClip",
    "ClipRecord",
    "CrossAttentionFusionModel",
    "DatasetManifest",
    "EarlyFusionModel",
    "FeatureSequence",
    "LateFusionPair",
    "Modality",
    "ModelConfig",
    "PredictionSet",
    "SampleMode",
    "Split",
    "TrainConfig",
    "TsnPlan",
    "UnimodalProbe",
    "aggregate_seeds",
    "align_clip",
    "build_model",
    "evaluate_model",
    "evaluate_predictions",
    "load_manifest",
    "lr_at",
    "macro_f1",
    "macro_map",
    "normalize_skeleton",
    "read_sequence",
    "save_manifest",
    "top1_accuracy",
    "train",
    "tsn_sample",
    "write_sequence",
    "__version__",
]
