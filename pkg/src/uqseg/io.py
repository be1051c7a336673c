"""File formats: UQS1 stacks, UQSM masks, CSV manifests/scores/curves, PGM renders.

Binary layouts (all integers little-endian u32):

    stack: b"UQSS" version=1 T H W, then T*H*W float32 LE, sample-major, row-major
    mask:  b"UQSK" version=1 H W,   then H*W bytes each 0 or 1
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import as_mask, as_stack

STACK_MAGIC = b"UQSS"
MASK_MAGIC = b"UQSK"
FORMAT_VERSION = 1
STACK_HEADER = struct.Struct("<4sIIII")
MASK_HEADER = struct.Struct("<4sIII")

# values this far outside [0, 1] are clamped on read; anything further is an error
RANGE_TOLERANCE = 1e-6

MANIFEST_HEADER = ["image_id", "stack_path", "reference_seg_path", "gt_path"]
IMAGES_HEADER = ["image_id", "image_path", "gt_path"]
SCORES_HEADER = ["image_id", "metric", "raw_score", "normalized_score", "rank"]
CURVE_HEADER = ["metric", "fraction", "n_retained", "mean_dsc"]

# full-scale value per metric kind for fixed-range rendering
RENDER_RANGE = {"variance": 0.25, "entropy": math.log(2.0), "mutual_information": math.log(2.0), "atlas": 1.0}


class FormatError(ValueError):
    """A file does not follow its declared format."""


def fmt_real(x: float) -> str:
    return format(float(x), ".9g")


# -- binary containers -------------------------------------------------------


def encode_stack(stack) -> bytes:
    s = as_stack(stack)
    T, H, W = s.shape
    return STACK_HEADER.pack(STACK_MAGIC, FORMAT_VERSION, T, H, W) + s.astype("<f4").tobytes()


def decode_stack(data: bytes) -> np.ndarray:
    if len(data) < STACK_HEADER.size:
        raise FormatError(f"truncated header: {len(data)} bytes, need {STACK_HEADER.size}")
    magic, version, T, H, W = STACK_HEADER.unpack_from(data)
    if magic != STACK_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0, expected {STACK_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if T == 0 or H == 0 or W == 0:
        raise FormatError(f"empty dimensions T={T} H={H} W={W} at offset 8")
    expected = STACK_HEADER.size + 4 * T * H * W
    if len(data) != expected:
        raise FormatError(f"payload length mismatch: file has {len(data)} bytes, header implies {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=STACK_HEADER.size).astype(np.float64)
    bad = ~((values >= -RANGE_TOLERANCE) & (values <= 1.0 + RANGE_TOLERANCE))
    if bad.any():
        i = int(np.argmax(bad))
        raise FormatError(
            f"value {values[i]!r} outside [0, 1] at offset {STACK_HEADER.size + 4 * i} (sample index {i})"
        )
    return np.clip(values, 0.0, 1.0).reshape(T, H, W)


def write_stack(path, stack) -> None:
    Path(path).write_bytes(encode_stack(stack))


def read_stack(path) -> np.ndarray:
    return decode_stack(Path(path).read_bytes())


def encode_mask(mask) -> bytes:
    m = as_mask(mask)
    H, W = m.shape
    return MASK_HEADER.pack(MASK_MAGIC, FORMAT_VERSION, H, W) + m.astype(np.uint8).tobytes()


def decode_mask(data: bytes) -> np.ndarray:
    if len(data) < MASK_HEADER.size:
        raise FormatError(f"truncated header: {len(data)} bytes, need {MASK_HEADER.size}")
    magic, version, H, W = MASK_HEADER.unpack_from(data)
    if magic != MASK_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0, expected {MASK_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if H == 0 or W == 0:
        raise FormatError(f"empty dimensions H={H} W={W} at offset 8")
    expected = MASK_HEADER.size + H * W
    if len(data) != expected:
        raise FormatError(f"payload length mismatch: file has {len(data)} bytes, header implies {expected}")
    payload = np.frombuffer(data, dtype=np.uint8, offset=MASK_HEADER.size)
    bad = payload > 1
    if bad.any():
        i = int(np.argmax(bad))
        raise FormatError(f"non-binary byte {payload[i]} at pixel index {i} (offset {MASK_HEADER.size + i})")
    return payload.reshape(H, W).astype(bool)


def write_mask(path, mask) -> None:
    Path(path).write_bytes(encode_mask(mask))


def read_mask(path) -> np.ndarray:
    return decode_mask(Path(path).read_bytes())


# -- rendering ---------------------------------------------------------------


def render_pgm(umap, normalization: str = "fixed_range", kind: str | None = None) -> bytes:
    """Binary 8-bit PGM of an uncertainty map.

    ``per_image`` stretches [min, max] onto [0, 255] (a flat map is black);
    ``fixed_range`` scales [0, full scale of ``kind``] onto [0, 255].
    """
    u = np.asarray(umap, dtype=np.float64)
    if u.ndim != 2 or u.size == 0:
        raise ValueError("can only render a nonempty 2-D map")
    if normalization == "per_image":
        lo, hi = float(u.min()), float(u.max())
        scaled = np.zeros_like(u) if hi == lo else (u - lo) / (hi - lo)
    elif normalization == "fixed_range":
        if kind not in RENDER_RANGE:
            raise ValueError(f"fixed_range rendering needs a metric kind, one of {sorted(RENDER_RANGE)}")
        scaled = u / RENDER_RANGE[kind]
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    pixels = np.floor(np.clip(scaled, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    H, W = u.shape
    return f"P5\n{W} {H}\n255\n".encode("ascii") + pixels.tobytes()


# -- CSV ---------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    stack_path: Path
    reference_seg_path: Path | None
    gt_path: Path | None


def _resolve(base: Path, value: str) -> Path | None:
    value = value.strip()
    if not value:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _read_table(path, header: list[str], required: list[str]) -> list[dict]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FormatError(f"{path}: missing header")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise FormatError(f"{path}: missing header column(s) {', '.join(missing)}; expected {','.join(header)}")
        rows = [dict(r) for r in reader]
    if not rows:
        raise FormatError(f"{path}: no images")
    seen = set()
    for r in rows:
        image_id = (r.get("image_id") or "").strip()
        if not image_id:
            raise FormatError(f"{path}: empty image_id")
        if image_id in seen:
            raise FormatError(f"{path}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        r["image_id"] = image_id
    return rows


def _check_readable(path: Path | None, image_id: str, column: str) -> None:
    if path is not None and not os.access(path, os.R_OK):
        raise FormatError(f"image {image_id!r}: {column} {str(path)!r} is not a readable file")


def read_manifest(path, check_files: bool = True) -> list[ManifestRow]:
    """Parse a manifest; relative paths resolve against the manifest's directory."""
    base = Path(path).parent
    rows = []
    for r in _read_table(path, MANIFEST_HEADER, ["image_id", "stack_path", "reference_seg_path"]):
        stack = _resolve(base, r["stack_path"] or "")
        if stack is None:
            raise FormatError(f"image {r['image_id']!r}: empty stack_path")
        row = ManifestRow(
            r["image_id"],
            stack,
            _resolve(base, r.get("reference_seg_path") or ""),
            _resolve(base, r.get("gt_path") or ""),
        )
        if check_files:
            _check_readable(row.stack_path, row.image_id, "stack_path")
            _check_readable(row.reference_seg_path, row.image_id, "reference_seg_path")
            _check_readable(row.gt_path, row.image_id, "gt_path")
        rows.append(row)
    return rows


def _rel(p: Path | None, base: Path) -> str:
    if p is None:
        return ""
    try:
        return Path(os.path.relpath(p, base)).as_posix()
    except ValueError:
        return p.as_posix()


def write_manifest(path, rows: list[ManifestRow]) -> None:
    """Write a manifest with paths relative to its own directory."""
    base = Path(path).parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in rows:
            w.writerow([r.image_id, _rel(r.stack_path, base), _rel(r.reference_seg_path, base), _rel(r.gt_path, base)])


@dataclass(frozen=True)
class ImageRow:
    image_id: str
    image_path: Path
    gt_path: Path | None


def read_images(path) -> list[ImageRow]:
    """Input-image list for test-time augmentation (images are single-sample stacks)."""
    base = Path(path).parent
    rows = []
    for r in _read_table(path, IMAGES_HEADER, ["image_id", "image_path"]):
        img = _resolve(base, r["image_path"] or "")
        if img is None:
            raise FormatError(f"image {r['image_id']!r}: empty image_path")
        row = ImageRow(r["image_id"], img, _resolve(base, r.get("gt_path") or ""))
        _check_readable(row.image_path, row.image_id, "image_path")
        _check_readable(row.gt_path, row.image_id, "gt_path")
        rows.append(row)
    return rows


def write_scores(path, scores) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORES_HEADER)
        for s in scores:
            w.writerow([s.image_id, s.metric, fmt_real(s.raw), fmt_real(s.normalized), s.rank])


def read_scores(path):
    from .aggregate import ImageScore

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != SCORES_HEADER:
            raise FormatError(f"{path}: expected header {','.join(SCORES_HEADER)}")
        try:
            return [
                ImageScore(r["image_id"], r["metric"], float(r["raw_score"]), float(r["normalized_score"]), int(r["rank"]))
                for r in reader
            ]
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed score row ({exc})") from None


def write_curves(path, curves) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for c in curves:
            for p in c.points:
                n = "" if p.n_retained is None else p.n_retained
                w.writerow([c.metric, fmt_real(p.retained_fraction), n, fmt_real(p.mean_dsc)])


def write_curve(path, curve) -> None:
    write_curves(path, [curve])


# -- TTA sidecars ------------------------------------------------------------


def write_sidecar(path, specs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, spec in enumerate(specs):
            fh.write(json.dumps(spec.to_record(k), sort_keys=False) + "\n")


def read_sidecar(path):
    from .tta import TransformSpec

    specs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec["index"] != len(specs):
                    raise ValueError(f"index {rec['index']} out of sequence")
                specs.append(TransformSpec.from_record(rec))
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad sidecar record ({exc})") from None
    if not specs:
        raise FormatError(f"{path}: empty sidecar")
    return specs
