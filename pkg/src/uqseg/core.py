"""Grid types, validation, thresholding, binary entropy and Dice.

Maps are plain numpy arrays:

* probability map: ``(H, W)`` float64 in [0, 1]
* sample stack: ``(T, H, W)`` float64 in [0, 1]
* binary mask: ``(H, W)`` bool
* uncertainty map: ``(H, W)`` float64, finite and >= 0
"""

from __future__ import annotations

from decimal import ROUND_HALF_UP, Decimal

import numpy as np
from scipy.special import entr


def as_probability_map(values, name: str = "map") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array, got shape {arr.shape}")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def as_stack(values) -> np.ndarray:
    """Validate a ``(T, H, W)`` sample stack. A single 2-D map is promoted to T=1."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3 or arr.size == 0:
        raise ValueError(f"sample stack must be a nonempty (T, H, W) array, got shape {arr.shape}")
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError("sample stack values must lie in [0, 1]")
    return arr


def as_mask(values, name: str = "mask") -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 2-D array, got shape {arr.shape}")
    if arr.dtype != np.bool_:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"{name} values must be 0 or 1")
        arr = arr.astype(bool)
    return arr


def threshold(prob_map, h: float) -> np.ndarray:
    """Binarize a probability map; a pixel is foreground iff its value is >= ``h``."""
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {h}")
    return as_probability_map(prob_map) >= h


def binary_entropy(p):
    """Entropy in nats of a Bernoulli(p) variable, with 0 ln 0 taken as 0.

    Works elementwise on arrays; a python float in gives a python float out.
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError("binary_entropy is only defined on [0, 1]")
    out = entr(arr) + entr(1.0 - arr)
    if np.ndim(p) == 0:
        return float(out)
    return out


def dsc(a, b) -> float:
    """Dice similarity 2|a & b| / (|a| + |b|). Two empty masks agree perfectly (1.0)."""
    a = as_mask(a, "a")
    b = as_mask(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def round_half_up_count(fraction: float, n: int) -> int:
    """``floor(fraction * n + 0.5)`` evaluated on the decimal value of ``fraction``.

    Decimal arithmetic keeps e.g. 0.15 * 10 at exactly 1.5 so it rounds up to 2.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    scaled = Decimal(repr(float(fraction))) * n
    return int(scaled.quantize(Decimal(1), rounding=ROUND_HALF_UP))
