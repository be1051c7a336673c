"""Synthetic ellipse phantoms and perturbed sample stacks.

Severity drives both the spread of the samples and the error of the
reference prediction, so image-level uncertainty tracks segmentation
quality by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .core import threshold

BLUR_RADIUS = 3

# amplitudes of the two perturbation terms at severity 1
NOISE_AMPLITUDE = 0.35
JITTER_AMPLITUDE = 0.9

COHORT_SIZE = 128
COHORT_SAMPLES = 20
COHORT_SOFTNESS = 0.0


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 128
    width: int = 128
    cx: float = 63.5
    cy: float = 63.5
    a: float = 30.0  # semi-axis along x (columns)
    b: float = 20.0  # semi-axis along y (rows)
    boundary_softness: float = 1.0
    severity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("phantom must have positive dimensions")
        if self.a <= 0 or self.b <= 0:
            raise ValueError("semi-axes must be positive")
        if self.boundary_softness < 0:
            raise ValueError("boundary softness must be >= 0")
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError("severity must lie in [0, 1]")
        margin = 2.0
        if (
            self.cx - self.a < margin
            or self.cy - self.b < margin
            or self.cx + self.a > self.width - 1 - margin
            or self.cy + self.b > self.height - 1 - margin
        ):
            raise ValueError("ellipse does not fit inside the image with a 2 px margin")


def ellipse_signed_distance(spec: PhantomSpec) -> np.ndarray:
    """First-order signed distance to the ellipse boundary (negative inside)."""
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    u = (xx - spec.cx) / spec.a
    v = (yy - spec.cy) / spec.b
    rho = np.hypot(u, v)
    # |grad rho| = |(u/a, v/b)| / rho; guard the centre where rho = 0
    grad = np.hypot(u / spec.a, v / spec.b) / np.where(rho > 0, rho, 1.0)
    grad = np.where(rho > 0, grad, 1.0 / max(spec.a, spec.b))
    return (rho - 1.0) / grad


def generate_phantom(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth ellipse mask and a soft probability map around it.

    The map is a logistic ramp of the signed boundary distance with scale
    ``boundary_softness``; softness 0 gives the hard mask.
    """
    d = ellipse_signed_distance(spec)
    gt = d <= 0.0
    if spec.boundary_softness == 0.0:
        base = gt.astype(np.float64)
    else:
        base = expit(-d / spec.boundary_softness)
    return gt, base


def smooth_field(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """Spatially correlated noise with unit variance away from the border.

    White noise through a 7x7 box blur applied twice; the result is rescaled
    by the exact L2 norm of the combined kernel.
    """
    size = 2 * BLUR_RADIUS + 1
    field = rng.standard_normal(shape)
    for _ in range(2):
        field = ndimage.uniform_filter(field, size=size, mode="reflect")
    return field / _KERNEL_NORM


def _kernel_norm() -> float:
    size = 2 * BLUR_RADIUS + 1
    box = np.full(size, 1.0 / size)
    k1 = np.convolve(box, box)
    return float(np.sum(k1**2))  # 2-D kernel is outer(k1, k1); its L2 norm is sum(k1**2)


_KERNEL_NORM = _kernel_norm()


def boundary_band(base: np.ndarray) -> np.ndarray:
    """Weight in [0, 1] peaking along the 0.5 level set of a blurred base map."""
    s = np.asarray(base, dtype=np.float64)
    for _ in range(2):
        s = ndimage.uniform_filter(s, size=2 * BLUR_RADIUS + 1, mode="nearest")
    return np.clip(4.0 * s * (1.0 - s), 0.0, 1.0)


def perturb_stack(base, T: int, severity: float, seed: int) -> np.ndarray:
    """T perturbed copies of ``base``.

    sample_t = clip(base + severity * (NOISE_AMPLITUDE * n_t
                                       + JITTER_AMPLITUDE * band * j_t), 0, 1)

    with ``n_t`` and ``j_t`` independent smooth unit-variance fields and
    ``band`` concentrated at the object boundary.
    """
    base = np.asarray(base, dtype=np.float64)
    if T < 1:
        raise ValueError("need at least one sample")
    if not 0.0 <= severity <= 1.0:
        raise ValueError("severity must lie in [0, 1]")
    if severity == 0.0:
        return np.repeat(base[np.newaxis], T, axis=0)
    rng = np.random.default_rng(seed)
    band = boundary_band(base)
    out = np.empty((T,) + base.shape)
    for t in range(T):
        noise = smooth_field(rng, base.shape)
        jitter = smooth_field(rng, base.shape)
        out[t] = base + severity * (NOISE_AMPLITUDE * noise + JITTER_AMPLITUDE * band * jitter)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class CohortImage:
    image_id: str
    gt: np.ndarray
    reference: np.ndarray
    stack: np.ndarray
    severity: float


def _image_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def cohort_image(
    index: int,
    severity: float,
    seed: int,
    size: int = COHORT_SIZE,
    samples: int = COHORT_SAMPLES,
    softness: float = COHORT_SOFTNESS,
) -> CohortImage:
    """One cohort member; depends only on (seed, index, severity) and the sizes."""
    rng = _image_rng(seed, index)
    scale = size / 128.0
    spec = PhantomSpec(
        height=size,
        width=size,
        cx=(size - 1) / 2.0 + rng.uniform(-4, 4) * scale,
        cy=(size - 1) / 2.0 + rng.uniform(-4, 4) * scale,
        a=30.0 * scale * rng.uniform(0.9, 1.1),
        b=20.0 * scale * rng.uniform(0.9, 1.1),
        boundary_softness=softness,
        severity=severity,
        seed=int(rng.integers(0, 2**63)),
    )
    gt, base = generate_phantom(spec)
    stack = perturb_stack(base, samples, severity, spec.seed)
    # sample 0 plays the deterministic model's prediction
    reference = threshold(stack[0], 0.5)
    return CohortImage(f"img{index:04d}", gt, reference, stack, float(severity))


def iter_cohort(
    n_images: int = 200,
    severity_range: tuple[float, float] = (0.0, 0.9),
    seed: int = 42,
    size: int = COHORT_SIZE,
    samples: int = COHORT_SAMPLES,
    softness: float = COHORT_SOFTNESS,
) -> Iterator[CohortImage]:
    """Lazily generate a cohort with severities evenly spaced over ``severity_range``."""
    lo, hi = severity_range
    if n_images < 2:
        raise ValueError("a cohort needs at least 2 images")
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"bad severity range {severity_range}")
    for i, sev in enumerate(np.linspace(lo, hi, n_images)):
        yield cohort_image(i, float(sev), seed, size, samples, softness)


def generate_cohort(n_images: int = 200, severity_range=(0.0, 0.9), seed: int = 42, **kwargs) -> list[CohortImage]:
    return list(iter_cohort(n_images, severity_range, seed, **kwargs))
