"""CLI harness: synthetic data, toy tracker, training loop, ablation grid."""

from .config import DEGRADATION_TAGS, RunConfig, load_config
from .data import SyntheticSample, complementary_split, generate_dataset
from .metrics import MetricsRecord, usage_entropy, write_metrics
from .model import Tracker, gaussian_center_map, patch_embed
from .train import TrackResult, TrainResult, ablate, evaluate, forward_track, train
from .verify import end_to_end_gradient_check, tiny_config, unit_gradient_suite

__all__ = [
    "RunConfig", "load_config", "DEGRADATION_TAGS",
    "SyntheticSample", "generate_dataset", "complementary_split",
    "MetricsRecord", "usage_entropy", "write_metrics",
    "Tracker", "patch_embed", "gaussian_center_map",
    "forward_track", "train", "evaluate", "ablate", "TrackResult", "TrainResult",
    "unit_gradient_suite", "end_to_end_gradient_check", "tiny_config",
]
