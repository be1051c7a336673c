"""Test-time augmentation: sample transforms, augment inputs, re-align predictions.

A transform is applied as rotate (about the image centre, bilinear, zero
fill) -> horizontal flip -> additive Gaussian noise. Predictions made on an
augmented input are mapped back by un-flipping and rotating the other way;
the noise has no inverse.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .core import as_probability_map

MAX_ROTATION_DEG = 20.0
DEFAULT_SAMPLES = 50
DEFAULT_NOISE_SIGMA = 0.01


@dataclass(frozen=True)
class TransformSpec:
    rotation_deg: float = 0.0
    hflip: bool = False
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if not -MAX_ROTATION_DEG <= self.rotation_deg <= MAX_ROTATION_DEG:
            raise ValueError(f"rotation {self.rotation_deg} outside [-20, 20] degrees")
        if not self.noise_sigma >= 0.0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if not 0 <= self.noise_seed < 2**64:
            raise ValueError("noise seed must be an unsigned 64-bit integer")

    @property
    def is_identity(self) -> bool:
        return self.rotation_deg == 0.0 and not self.hflip and self.noise_sigma == 0.0

    def to_record(self, index: int) -> dict:
        return {"index": index, **asdict(self)}

    @classmethod
    def from_record(cls, rec: dict) -> "TransformSpec":
        return cls(
            rotation_deg=float(rec["rotation_deg"]),
            hflip=bool(rec["hflip"]),
            noise_sigma=float(rec["noise_sigma"]),
            noise_seed=int(rec["noise_seed"]),
        )


@dataclass(frozen=True)
class AugmentationConfig:
    max_rotation_deg: float = MAX_ROTATION_DEG
    flip_probability: float = 0.5
    # absolute sigma; 0.01 is 1% of the range for intensities in [0, 1]
    noise_sigma: float = DEFAULT_NOISE_SIGMA


def sample_transforms(count: int = DEFAULT_SAMPLES, seed: int = 0, config: AugmentationConfig | None = None) -> list[TransformSpec]:
    """Draw ``count`` transforms; the first is always the identity.

    Each transform gets its own generator spawned from ``seed``, so spec k
    does not depend on how many specs are drawn.
    """
    if count < 1:
        raise ValueError("need at least one transform")
    config = config or AugmentationConfig()
    if not 0.0 <= config.max_rotation_deg <= MAX_ROTATION_DEG:
        raise ValueError("max rotation must lie in [0, 20] degrees")
    children = np.random.SeedSequence(seed).spawn(count)
    specs = []
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        noise_seed = int(rng.integers(0, 2**63))
        if k == 0:
            specs.append(TransformSpec(noise_seed=noise_seed))
            continue
        rotation = float(rng.uniform(-config.max_rotation_deg, config.max_rotation_deg))
        hflip = bool(rng.random() < config.flip_probability)
        specs.append(TransformSpec(rotation, hflip, config.noise_sigma, noise_seed))
    return specs


def rotate(img: np.ndarray, degrees: float, order: int = 1) -> np.ndarray:
    """Rotate content counter-clockwise (as displayed, row 0 on top) about the centre.

    Bilinear interpolation by default (``order=0`` gives nearest neighbour);
    samples falling outside the image read as 0.
    """
    img = np.asarray(img, dtype=np.float64)
    if degrees == 0.0:
        return img.copy()
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    # maps output (row, col) to the input location it samples, about the centre
    matrix = np.array([[c, s], [-s, c]])
    centre = (np.array(img.shape, dtype=np.float64) - 1.0) / 2.0
    offset = centre - matrix @ centre
    return ndimage.affine_transform(img, matrix, offset=offset, order=order, mode="constant", cval=0.0)


def apply_transform(img, t: TransformSpec) -> np.ndarray:
    out = np.array(img, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError("image contains non-finite values")
    if t.rotation_deg != 0.0:
        out = rotate(out, t.rotation_deg)
    if t.hflip:
        out = out[:, ::-1].copy()
    if t.noise_sigma > 0.0:
        out = out + np.random.default_rng(t.noise_seed).normal(0.0, t.noise_sigma, size=out.shape)
    return out


def invert_prediction(pred, t: TransformSpec) -> np.ndarray:
    """Map a prediction on the augmented input back onto the original grid."""
    out = np.array(as_probability_map(pred, "prediction"))
    if t.hflip:
        out = out[:, ::-1].copy()
    if t.rotation_deg != 0.0:
        out = rotate(out, -t.rotation_deg)
    return np.clip(out, 0.0, 1.0)


def assemble_stack(preds) -> np.ndarray:
    """Inverse-align ``(prediction, spec)`` pairs and stack them in input order."""
    preds = list(preds)
    if not preds:
        raise ValueError("no predictions to assemble")
    shape = np.shape(preds[0][0])
    aligned = []
    for k, (pred, spec) in enumerate(preds):
        if np.shape(pred) != shape:
            raise ValueError(f"prediction {k} has shape {np.shape(pred)}, expected {shape}")
        aligned.append(invert_prediction(pred, spec))
    return np.stack(aligned)


def interior_mask(shape: tuple[int, int], margin: float = 5.0) -> np.ndarray:
    """Pixels at least ``margin`` px inside the inscribed circle.

    These stay inside the frame under any rotation, so a rotate/unrotate
    round trip only suffers interpolation error there.
    """
    H, W = shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    r = np.hypot(yy - (H - 1) / 2.0, xx - (W - 1) / 2.0)
    return r <= min(H, W) / 2.0 - margin


def roundtrip_error(prob_map, spec: TransformSpec, margin: float = 5.0, order: int = 1) -> float:
    """Mean absolute error on the interior after augmenting and re-aligning a map.

    Noise is dropped from ``spec``; the prediction is taken to be the
    augmented map itself (an identity model).
    """
    m = as_probability_map(prob_map)
    if order == 1:
        clean = TransformSpec(spec.rotation_deg, spec.hflip, 0.0, spec.noise_seed)
        back = invert_prediction(np.clip(apply_transform(m, clean), 0.0, 1.0), clean)
    else:
        fwd = rotate(m, spec.rotation_deg, order)
        back = rotate(fwd, -spec.rotation_deg, order)
    mask = interior_mask(m.shape, margin)
    return float(np.abs(back - m)[mask].mean())
