"""Retention curves (mean Dice over the least-uncertain images) and summary tables."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

from .core import round_half_up_count

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    dsc_vs_gt: float | None
    uncertainty: dict[str, float] = field(default_factory=dict)  # metric -> normalized score


@dataclass(frozen=True)
class CurvePoint:
    retained_fraction: float
    n_retained: int | None
    mean_dsc: float


@dataclass(frozen=True)
class RetentionCurve:
    metric: str
    points: tuple[CurvePoint, ...]

    @property
    def fractions(self) -> tuple[float, ...]:
        return tuple(p.retained_fraction for p in self.points)

    @property
    def mean_dsc(self) -> tuple[float, ...]:
        return tuple(p.mean_dsc for p in self.points)

    @classmethod
    def from_values(cls, metric: str, fractions, means) -> "RetentionCurve":
        """Curve from precomputed per-fraction means, e.g. published results."""
        fractions, means = list(fractions), list(means)
        if len(fractions) != len(means):
            raise ValueError("fractions and means differ in length")
        _check_fractions(fractions)
        return cls(metric, tuple(CurvePoint(float(f), None, float(m)) for f, m in zip(fractions, means)))


def _check_fractions(fractions) -> None:
    if not fractions:
        raise ValueError("no retention fractions given")
    prev = 0.0
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"retention fraction {f} outside (0, 1]")
        if f <= prev:
            raise ValueError("retention fractions must be strictly increasing")
        prev = f


def retention_curve(records: list[EvalRecord], metric: str, fractions=DEFAULT_FRACTIONS) -> RetentionCurve:
    """Mean ground-truth Dice over the round(f * N) least uncertain images, per fraction.

    Images without ground truth are dropped with a warning. Ties in
    uncertainty go to the image that would be rejected last, i.e. the
    larger image_id is retained first, so retaining f and rejecting 1 - f
    pick complementary sets.
    """
    fractions = [float(f) for f in fractions]
    _check_fractions(fractions)
    usable = [r for r in records if r.dsc_vs_gt is not None]
    dropped = len(records) - len(usable)
    if dropped:
        logger.warning("%d image(s) without ground truth excluded from the %s curve", dropped, metric)
    if not usable:
        raise ValueError("no ground truth available")
    missing = [r.image_id for r in usable if metric not in r.uncertainty]
    if missing:
        raise ValueError(f"no {metric} score for image(s): {', '.join(missing[:5])}")

    # most uncertain first, exactly as ranked for rejection; retained = tail
    by_rank = sorted(usable, key=lambda r: (-r.uncertainty[metric], r.image_id))
    n = len(by_rank)
    points = []
    for f in fractions:
        k = round_half_up_count(f, n)
        if k == 0:
            raise ValueError(f"fraction {f} retains no images out of {n}")
        kept = by_rank[n - k:]
        points.append(CurvePoint(f, k, math.fsum(r.dsc_vs_gt for r in kept) / k))
    return RetentionCurve(metric, tuple(points))


def fraction_label(f: float) -> str:
    pct = f"{f * 100:g}"
    return f"Full-Dataset({pct}%)" if f == 1.0 else f"First {pct}%"


@dataclass
class SummaryTable:
    header: list[str]
    rows: list[list[str]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [self.header] + self.rows
        widths = [max(len(row[j]) for row in cells) for j in range(len(self.header))]
        lines = []
        for i, row in enumerate(cells):
            first = row[0].ljust(widths[0])
            rest = [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            lines.append("  ".join([first] + rest).rstrip())
            if i == 0:
                lines.append("-" * len(lines[0]))
        return "\n".join(lines) + "\n"


def summary_table(
    curves: list[RetentionCurve],
    baseline_dsc: float | None = None,
    decimals: int = 3,
    row_label: str = "Test Set",
) -> SummaryTable:
    """One row per curve, one column per retained fraction, optional baseline column."""
    if not curves:
        raise ValueError("no curves to tabulate")
    grid = curves[0].fractions
    for c in curves[1:]:
        if c.fractions != grid:
            raise ValueError(f"curve {c.metric!r} uses a different fraction grid")
    header = [row_label] + [fraction_label(f) for f in grid]
    if baseline_dsc is not None:
        header.append("Baseline")
    rows = []
    for c in curves:
        row = [c.metric] + [f"{m:.{decimals}f}" for m in c.mean_dsc]
        if baseline_dsc is not None:
            row.append(f"{baseline_dsc:.{decimals}f}")
        rows.append(row)
    return SummaryTable(header, rows)
