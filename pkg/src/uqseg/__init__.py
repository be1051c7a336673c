"""Segmentation uncertainty from ensemble sample stacks: pixel maps, image
scores, rejection and retention curves."""

from .aggregate import ImageScore, image_raw_scores, lse_score, minmax_normalize, rank_scores, score_set, select_rejected
from .core import binary_entropy, dsc, threshold
from .metrics import AtlasScore, atlas_score, build_atlas, mutual_information, pixel_variance, predictive_entropy
from .reject import EvalRecord, RetentionCurve, retention_curve, summary_table

__version__ = "0.1.0"

__all__ = [
    "AtlasScore",
    "EvalRecord",
    "ImageScore",
    "RetentionCurve",
    "atlas_score",
    "binary_entropy",
    "build_atlas",
    "dsc",
    "image_raw_scores",
    "lse_score",
    "minmax_normalize",
    "mutual_information",
    "pixel_variance",
    "predictive_entropy",
    "rank_scores",
    "retention_curve",
    "score_set",
    "select_rejected",
    "summary_table",
    "threshold",
]
