"""``uqseg`` command line: metrics, filter, curve, tta emit/collect, synth, render.

Exit codes: 0 success, 1 some images failed (others still written),
2 usage or configuration error. Logs go to stderr; data goes to files,
summaries to stdout.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as uio
from .aggregate import image_raw_scores, rank_scores, select_rejected
from .core import dsc, threshold
from .metrics import DEFAULT_ATLAS_THRESHOLDS, PIXEL_METRICS, atlas_metric_name, parse_metric, uncertainty_map
from .reject import DEFAULT_FRACTIONS, EvalRecord, retention_curve, summary_table
from .synth import COHORT_SAMPLES, COHORT_SIZE, cohort_image
from .tta import DEFAULT_NOISE_SIGMA, DEFAULT_SAMPLES, AugmentationConfig, apply_transform, assemble_stack, sample_transforms

logger = logging.getLogger("uqseg")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- argument helpers --------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _unit_fraction(text: str) -> float:
    try:
        f = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= f <= 1.0:
        raise argparse.ArgumentTypeError(f"fraction must lie in [0, 1], got {f}")
    return f


def _severity_range(text: str) -> tuple[float, float]:
    vals = _float_list(text)
    if len(vals) != 2 or not 0.0 <= vals[0] <= vals[1] <= 1.0:
        raise argparse.ArgumentTypeError("severity range must be 'lo,hi' with 0 <= lo <= hi <= 1")
    return vals[0], vals[1]


def resolve_metrics(selection: str, thresholds: list[float]) -> list[str]:
    """Expand a comma list like ``entropy,atlas`` into canonical metric names."""
    out: list[str] = []
    for name in (s.strip() for s in selection.split(",")):
        if not name:
            continue
        if name == "all":
            expanded = list(PIXEL_METRICS) + [atlas_metric_name(h) for h in thresholds]
        elif name == "atlas":
            expanded = [atlas_metric_name(h) for h in thresholds]
        else:
            kind, h = parse_metric(name)
            expanded = [name if h is None else atlas_metric_name(h)]
        out.extend(m for m in expanded if m not in out)
    if not out:
        raise ValueError("no metrics selected")
    return out


def _pool_map(fn, items, workers: int):
    """Ordered map, in-process for one worker."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- per-image work (module level so worker processes can import it) ----------


def _score_image(job):
    row, metrics, want_dsc, render_dir, render_norm = job
    try:
        stack = uio.read_stack(row.stack_path)
        reference = uio.read_mask(row.reference_seg_path) if row.reference_seg_path else None
        if reference is not None and reference.shape != stack.shape[1:]:
            raise ValueError(f"reference shape {reference.shape} does not match stack {stack.shape[1:]}")
        raws = image_raw_scores(stack, reference, metrics)
        dsc_gt = None
        if want_dsc and row.gt_path is not None:
            if reference is None:
                raise ValueError("ground truth given but no reference segmentation")
            dsc_gt = dsc(reference, uio.read_mask(row.gt_path))
        if render_dir is not None:
            for metric in metrics:
                kind, _ = parse_metric(metric)
                if kind in PIXEL_METRICS:
                    pgm = uio.render_pgm(uncertainty_map(stack, kind), render_norm, kind)
                    (Path(render_dir) / f"{row.image_id}_{kind}.pgm").write_bytes(pgm)
        return row.image_id, raws, dsc_gt, None
    except (OSError, ValueError) as exc:
        return row.image_id, None, None, str(exc)


def _score_manifest(rows, metrics, workers, want_dsc=False, render_dir=None, render_norm="fixed_range"):
    jobs = [(r, metrics, want_dsc, render_dir, render_norm) for r in sorted(rows, key=lambda r: r.image_id)]
    results = _pool_map(_score_image, jobs, workers)
    raws, dscs, failed = {}, {}, []
    for image_id, raw, dsc_gt, err in results:
        if err is not None:
            logger.error("image %s failed: %s", image_id, err)
            failed.append(image_id)
            continue
        raws[image_id] = raw
        dscs[image_id] = dsc_gt
    if not raws:
        raise UsageError("every image failed")
    scores = {m: rank_scores({i: r[m] for i, r in raws.items()}, m) for m in metrics}
    return scores, dscs, failed


def _load_manifest(path):
    try:
        return uio.read_manifest(path)
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {path}") from None
    except uio.FormatError as exc:
        raise UsageError(str(exc)) from None


def _all_scores_sorted(scores: dict) -> list:
    rows = [s for per_metric in scores.values() for s in per_metric]
    order = {m: k for k, m in enumerate(scores)}
    return sorted(rows, key=lambda s: (s.image_id, order[s.metric]))


# -- commands ----------------------------------------------------------------


def cmd_metrics(args) -> int:
    rows = _load_manifest(args.manifest)
    metrics = resolve_metrics(args.metrics, args.atlas_thresholds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    render_dir = None
    if args.render:
        render_dir = out / "maps"
        render_dir.mkdir(exist_ok=True)
    scores, _, failed = _score_manifest(rows, metrics, args.workers, False, render_dir, args.render_normalization)
    uio.write_scores(out / "scores.csv", _all_scores_sorted(scores))
    print(f"scored {len(rows) - len(failed)} image(s) x {len(metrics)} metric(s) -> {out / 'scores.csv'}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_filter(args) -> int:
    rows = _load_manifest(args.manifest)
    metric = resolve_metrics(args.metric, DEFAULT_ATLAS_THRESHOLDS)
    if len(metric) != 1:
        raise UsageError("--metric must name exactly one metric")
    metric = metric[0]
    failed: list[str] = []
    if args.scores:
        try:
            scores = [s for s in uio.read_scores(args.scores) if s.metric == metric]
        except (OSError, uio.FormatError) as exc:
            raise UsageError(str(exc)) from None
        if not scores:
            raise UsageError(f"{args.scores} has no rows for metric {metric}")
    else:
        by_metric, _, failed = _score_manifest(rows, [metric], args.workers)
        scores = by_metric[metric]
    rejected, retained = select_rejected(scores, args.reject_fraction)
    by_id = {r.image_id: r for r in rows}
    unknown = [i for i in rejected + retained if i not in by_id]
    if unknown:
        raise UsageError(f"scores mention image(s) not in the manifest: {', '.join(unknown[:5])}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    uio.write_manifest(out / "retained.csv", [by_id[i] for i in retained])
    uio.write_manifest(out / "rejected.csv", [by_id[i] for i in rejected])
    print(f"metric {metric}: rejected {len(rejected)}, retained {len(retained)}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_curve(args) -> int:
    rows = _load_manifest(args.manifest)
    if all(r.gt_path is None for r in rows):
        raise UsageError("no ground truth available")
    metrics = resolve_metrics(args.metrics, args.atlas_thresholds)
    try:
        fractions = [float(f) for f in args.fractions]
        scores, dscs, failed = _score_manifest(rows, metrics, args.workers, want_dsc=True)
        norm = {m: {s.image_id: s.normalized for s in per} for m, per in scores.items()}
        records = [EvalRecord(i, dscs[i], {m: norm[m][i] for m in metrics}) for i in sorted(dscs)]
        curves = [retention_curve(records, m, fractions) for m in metrics]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    table = summary_table(curves, args.baseline)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    uio.write_scores(out / "scores.csv", _all_scores_sorted(scores))
    uio.write_curves(out / "curve.csv", curves)
    (out / "summary.csv").write_text(table.to_csv(), encoding="utf-8", newline="\n")
    (out / "summary.txt").write_text(table.to_text(), encoding="utf-8", newline="\n")
    sys.stdout.write(table.to_text())
    return EXIT_PARTIAL if failed else EXIT_OK


def _read_image(path) -> np.ndarray:
    stack = uio.read_stack(path)
    if stack.shape[0] != 1:
        raise ValueError(f"{path}: expected a single-sample stack, got T={stack.shape[0]}")
    return stack[0]


def cmd_tta_emit(args) -> int:
    try:
        images = uio.read_images(args.images)
    except (FileNotFoundError, uio.FormatError) as exc:
        raise UsageError(str(exc)) from None
    config = AugmentationConfig(noise_sigma=args.noise_sigma)
    specs = sample_transforms(args.samples, args.seed, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for img_row in images:
        try:
            img = _read_image(img_row.image_path)
        except (OSError, ValueError) as exc:
            logger.error("image %s failed: %s", img_row.image_id, exc)
            failed += 1
            continue
        for k, spec in enumerate(specs):
            aug = np.clip(apply_transform(img, spec), 0.0, 1.0)
            uio.write_stack(out / f"{img_row.image_id}_aug{k}.uqs", aug[np.newaxis])
        uio.write_sidecar(out / f"{img_row.image_id}.tta.jsonl", specs)
    print(f"emitted {len(specs)} augmentation(s) for {len(images) - failed} image(s) -> {out}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _collect_one(img_row, sidecar_dir: Path, pred_dir: Path, out: Path, ref_threshold: float) -> uio.ManifestRow:
    specs = uio.read_sidecar(sidecar_dir / f"{img_row.image_id}.tta.jsonl")
    preds = []
    for k, spec in enumerate(specs):
        path = pred_dir / f"{img_row.image_id}_aug{k}.uqs"
        if not path.exists():
            raise ValueError(f"missing prediction for augmentation index {k}: {path}")
        preds.append((_read_image(path), spec))
    stack = assemble_stack(preds)
    identity = [k for k, s in enumerate(specs) if s.is_identity]
    source = stack[identity[0]] if identity else stack.mean(axis=0)
    stack_path = out / f"{img_row.image_id}.uqs"
    ref_path = out / f"{img_row.image_id}_ref.uqm"
    uio.write_stack(stack_path, stack)
    uio.write_mask(ref_path, threshold(source, ref_threshold))
    return uio.ManifestRow(img_row.image_id, stack_path, ref_path, img_row.gt_path)


def cmd_tta_collect(args) -> int:
    try:
        images = uio.read_images(args.images)
    except (FileNotFoundError, uio.FormatError) as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sidecar_dir = Path(args.sidecars)
    pred_dir = Path(args.predictions)
    rows, failed = [], 0
    for img_row in images:
        try:
            rows.append(_collect_one(img_row, sidecar_dir, pred_dir, out, args.reference_threshold))
        except (OSError, ValueError) as exc:
            logger.error("image %s failed: %s", img_row.image_id, exc)
            failed += 1
    if not rows:
        raise UsageError("no image could be collected")
    uio.write_manifest(out / "manifest.csv", rows)
    print(f"collected {len(rows)} stack(s) -> {out / 'manifest.csv'}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _synth_one(job):
    index, severity, seed, size, samples, out = job
    im = cohort_image(index, severity, seed, size, samples)
    out = Path(out)
    stack_path = out / "stacks" / f"{im.image_id}.uqs"
    ref_path = out / "masks" / f"{im.image_id}_ref.uqm"
    gt_path = out / "masks" / f"{im.image_id}_gt.uqm"
    uio.write_stack(stack_path, im.stack)
    uio.write_mask(ref_path, im.reference)
    uio.write_mask(gt_path, im.gt)
    return uio.ManifestRow(im.image_id, stack_path, ref_path, gt_path), im.severity


def cmd_synth(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2 (normalization needs two images)")
    if args.size < 16:
        raise UsageError("--size must be at least 16")
    out = Path(args.out)
    (out / "stacks").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lo, hi = args.severity_range
    severities = np.linspace(lo, hi, args.n)
    jobs = [(i, float(s), args.seed, args.size, args.samples, str(out)) for i, s in enumerate(severities)]
    results = _pool_map(_synth_one, jobs, args.workers)
    uio.write_manifest(out / "manifest.csv", [r for r, _ in results])
    with open(out / "severities.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "severity"])
        for r, sev in results:
            w.writerow([r.image_id, uio.fmt_real(sev)])
    print(f"wrote {args.n} synthetic image(s) -> {out / 'manifest.csv'}")
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        stack = uio.read_stack(args.stack)
    except (OSError, uio.FormatError) as exc:
        raise UsageError(str(exc)) from None
    pgm = uio.render_pgm(uncertainty_map(stack, args.metric), args.normalization, args.metric)
    Path(args.output).write_bytes(pgm)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _add_metric_args(p):
    p.add_argument(
        "--metrics",
        default="all",
        help="comma list of variance, entropy, mutual_information, atlas, atlas@H or all (default: %(default)s)",
    )
    p.add_argument(
        "--atlas-thresholds",
        type=_float_list,
        default=list(DEFAULT_ATLAS_THRESHOLDS),
        help="thresholds used when 'atlas' is selected (default: 0.1,0.5,0.9)",
    )


def _add_workers(p):
    p.add_argument("--workers", type=int, default=1, help="worker processes; output does not depend on it (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uqseg", description="Image-level segmentation uncertainty from sample stacks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="score every image of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory (scores.csv, maps/)")
    _add_metric_args(p)
    p.add_argument("--render", action="store_true", help="also write PGM maps for pixel metrics")
    p.add_argument("--render-normalization", choices=["fixed_range", "per_image"], default="fixed_range",
                   help="PGM scaling (default: %(default)s)")
    _add_workers(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("filter", help="split a manifest into retained and rejected images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reject-fraction", type=_unit_fraction, required=True, help="fraction of most uncertain images to reject")
    p.add_argument("--metric", default="atlas@0.5", help="metric used for ranking (default: %(default)s)")
    p.add_argument("--scores", help="existing scores.csv; computed from the manifest when omitted")
    _add_workers(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("curve", help="retention curves and summary table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_metric_args(p)
    p.add_argument(
        "--fractions",
        type=_float_list,
        default=list(DEFAULT_FRACTIONS),
        help="retained fractions (default: 0.2,0.4,0.6,0.8,1.0)",
    )
    p.add_argument("--baseline", type=float, help="reference Dice shown as an extra column")
    _add_workers(p)
    p.set_defaults(func=cmd_curve)

    tta = sub.add_parser("tta", help="test-time augmentation round trip").add_subparsers(dest="tta_command", required=True)
    p = tta.add_parser("emit", help="write augmented inputs and transform sidecars")
    p.add_argument("--images", required=True, help="CSV with image_id,image_path[,gt_path]")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="augmentations per image, first is identity (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="transform sampling seed (default: 0)")
    p.add_argument("--noise-sigma", type=float, default=DEFAULT_NOISE_SIGMA, help="Gaussian noise sigma (default: %(default)s)")
    p.set_defaults(func=cmd_tta_emit)
    p = tta.add_parser("collect", help="inverse-align external predictions into stacks")
    p.add_argument("--images", required=True)
    p.add_argument("--sidecars", required=True, help="directory written by 'tta emit'")
    p.add_argument("--predictions", required=True, help="directory holding <image_id>_aug<k>.uqs predictions")
    p.add_argument("--out", required=True)
    p.add_argument("--reference-threshold", type=_unit_fraction, default=0.5,
                   help="threshold on the identity prediction for the reference mask (default: %(default)s)")
    p.set_defaults(func=cmd_tta_collect)

    p = sub.add_parser("synth", help="write a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200, help="number of images (default: %(default)s)")
    p.add_argument("--severity-range", type=_severity_range, default=(0.0, 0.9), help="lo,hi (default: 0,0.9)")
    p.add_argument("--seed", type=int, default=42, help="cohort seed (default: 42)")
    p.add_argument("--samples", type=int, default=COHORT_SAMPLES, help="samples per stack (default: %(default)s)")
    p.add_argument("--size", type=int, default=COHORT_SIZE, help="image side in pixels (default: %(default)s)")
    _add_workers(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="render one stack's uncertainty map as PGM")
    p.add_argument("stack")
    p.add_argument("--metric", choices=list(PIXEL_METRICS) + ["atlas"], default="entropy", help="(default: %(default)s)")
    p.add_argument("--normalization", choices=["fixed_range", "per_image"], default="fixed_range", help="(default: %(default)s)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    if getattr(args, "samples", 1) < 1:
        parser.error("--samples must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
