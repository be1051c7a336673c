"""Per-pixel uncertainty maps and the probabilistic-atlas image score.

All functions take a ``(T, H, W)`` stack of foreground probabilities for one
image and are invariant to the order of the T samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_mask, as_stack, binary_entropy, dsc, threshold

PIXEL_METRICS = ("variance", "entropy", "mutual_information")
DEFAULT_ATLAS_THRESHOLDS = (0.1, 0.5, 0.9)

# Absolute slack within which a slightly negative mutual information is
# treated as rounding noise and clamped to zero.
MI_CLAMP_EPS = 1e-12


def atlas_metric_name(h: float) -> str:
    return f"atlas@{h:g}"


def parse_metric(name: str) -> tuple[str, float | None]:
    """Split a metric name into ``(kind, threshold)``.

    >>> parse_metric("atlas@0.5")
    ('atlas', 0.5)
    >>> parse_metric("entropy")
    ('entropy', None)
    """
    if name in PIXEL_METRICS:
        return name, None
    if name.startswith("atlas@"):
        try:
            h = float(name[len("atlas@"):])
        except ValueError:
            raise ValueError(f"bad atlas threshold in metric {name!r}") from None
        if not 0.0 <= h <= 1.0:
            raise ValueError(f"atlas threshold must lie in [0, 1]: {name!r}")
        return "atlas", h
    raise ValueError(f"unknown metric {name!r}")


def default_metrics(thresholds=DEFAULT_ATLAS_THRESHOLDS) -> list[str]:
    return list(PIXEL_METRICS) + [atlas_metric_name(h) for h in thresholds]


@dataclass(frozen=True)
class AtlasScore:
    threshold: float
    dsc_h: float

    @property
    def uncertainty(self) -> float:
        return 1.0 - self.dsc_h


def _agreement(s: np.ndarray) -> np.ndarray:
    return (s == s[0]).all(axis=0)


def _mean(s: np.ndarray) -> np.ndarray:
    # a float mean of T copies of x need not equal x; pin unanimous pixels
    return np.where(_agreement(s), s[0], s.mean(axis=0))


def build_atlas(stack) -> np.ndarray:
    """Per-pixel mean over the samples."""
    return _mean(as_stack(stack))


def pixel_variance(stack) -> np.ndarray:
    """Population variance (divisor T) of the samples at each pixel.

    Exactly zero wherever all samples agree.
    """
    s = as_stack(stack)
    return ((s - _mean(s)) ** 2).mean(axis=0)


def predictive_entropy(stack) -> np.ndarray:
    return binary_entropy(build_atlas(stack))


def mutual_information(stack, clamp: bool = True) -> np.ndarray:
    """Entropy of the mean prediction minus the mean of per-sample entropies.

    Zero wherever all samples agree. Concavity makes the rest nonnegative;
    with ``clamp`` values in ``[-MI_CLAMP_EPS, 0)`` are set to zero.
    """
    s = as_stack(stack)
    mi = binary_entropy(_mean(s)) - binary_entropy(s).mean(axis=0)
    mi[_agreement(s)] = 0.0
    if clamp:
        mi[(mi < 0.0) & (mi >= -MI_CLAMP_EPS)] = 0.0
    return mi


def atlas_score(stack, reference, h: float) -> AtlasScore:
    """Dice between the thresholded atlas and the reference segmentation."""
    s = as_stack(stack)
    ref = as_mask(reference, "reference")
    if ref.shape != s.shape[1:]:
        raise ValueError(f"reference shape {ref.shape} does not match stack {s.shape[1:]}")
    return AtlasScore(threshold=h, dsc_h=dsc(threshold(build_atlas(s), h), ref))


def uncertainty_map(stack, kind: str) -> np.ndarray:
    """Dispatch by metric kind; ``"atlas"`` returns the atlas itself for rendering."""
    if kind == "variance":
        return pixel_variance(stack)
    if kind == "entropy":
        return predictive_entropy(stack)
    if kind == "mutual_information":
        return mutual_information(stack)
    if kind == "atlas":
        return build_atlas(stack)
    raise ValueError(f"unknown metric kind {kind!r}")
