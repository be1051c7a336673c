"""Image-level uncertainty: log-sum-exp pooling, min-max normalization, ranking."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import round_half_up_count
from .metrics import AtlasScore, atlas_score, parse_metric, uncertainty_map


@dataclass(frozen=True)
class ImageScore:
    image_id: str
    metric: str
    raw: float
    normalized: float
    rank: int  # 1 = most uncertain


def lse_score(umap) -> float:
    """log(sum(exp(u))) over all pixels, shifted by the max for stability.

    The shifted exponentials are summed in sorted order, so the result is
    bit-identical under any permutation of the pixels.
    """
    u = np.asarray(umap, dtype=np.float64).ravel()
    if u.size == 0:
        raise ValueError("cannot pool an empty uncertainty map")
    if not np.all(np.isfinite(u)):
        raise ValueError("uncertainty map contains non-finite values")
    u_max = float(u.max())
    return u_max + math.log(float(np.sort(np.exp(u - u_max)).sum()))


def minmax_normalize(raw_scores) -> list[float]:
    """Affine map onto [0, 1]; a set with max == min maps to all zeros."""
    s = [float(x) for x in raw_scores]
    if not s:
        raise ValueError("cannot normalize an empty score list")
    lo, hi = min(s), max(s)
    if hi == lo:
        return [0.0] * len(s)
    span = hi - lo
    return [min(1.0, max(0.0, (x - lo) / span)) for x in s]


def rank_scores(raw: Mapping[str, float], metric: str) -> list[ImageScore]:
    """Normalize image-level raw scores and rank them, most uncertain first.

    Ordering is by descending raw score (identical to descending normalized
    score), ties broken by ascending image_id. Output is in rank order.
    """
    if not raw:
        raise ValueError("no images to score")
    ids = sorted(raw)
    normalized = dict(zip(ids, minmax_normalize(raw[i] for i in ids)))
    order = sorted(ids, key=lambda i: (-raw[i], i))
    return [
        ImageScore(image_id=i, metric=metric, raw=float(raw[i]), normalized=normalized[i], rank=r)
        for r, i in enumerate(order, start=1)
    ]


def score_set(records: Mapping[str, object], metric: str) -> list[ImageScore]:
    """Score a test set for one metric.

    ``records`` maps image_id to an uncertainty map (pixel metrics) or to an
    :class:`AtlasScore` (``atlas@h`` metrics). Atlas scores are already
    image-level and skip the log-sum-exp pooling.
    """
    kind, h = parse_metric(metric)
    raw = {}
    for image_id, rec in records.items():
        if kind == "atlas":
            if not isinstance(rec, AtlasScore):
                raise ValueError(f"{image_id}: atlas metric needs an AtlasScore, got {type(rec).__name__}")
            if rec.threshold != h:
                raise ValueError(f"{image_id}: AtlasScore threshold {rec.threshold} != {h}")
            raw[image_id] = rec.uncertainty
        else:
            if isinstance(rec, AtlasScore):
                raise ValueError(f"{image_id}: pixel metric {metric!r} cannot take an AtlasScore")
            raw[image_id] = lse_score(rec)
    return rank_scores(raw, metric)


def select_rejected(scores: list[ImageScore], reject_fraction: float) -> tuple[list[str], list[str]]:
    """Split into (rejected, retained) ids; the round(f * N) most uncertain are rejected.

    Both lists are returned in rank order.
    """
    n_reject = round_half_up_count(reject_fraction, len(scores))
    ordered = [s.image_id for s in sorted(scores, key=lambda s: (-s.raw, s.image_id))]
    return ordered[:n_reject], ordered[n_reject:]


def image_raw_scores(stack, reference, metrics: list[str]) -> dict[str, float]:
    """Raw image-level score for each metric of one image.

    Pixel metrics are LSE-pooled; atlas metrics give ``1 - DSC_h``.
    """
    out = {}
    for metric in metrics:
        kind, h = parse_metric(metric)
        if kind == "atlas":
            if reference is None:
                raise ValueError(f"metric {metric} needs a reference segmentation")
            out[metric] = atlas_score(stack, reference, h).uncertainty
        else:
            out[metric] = lse_score(uncertainty_map(stack, kind))
    return out
