"""
Command-line entry point.

Exit codes: 0 on success, 1 on runtime or numeric failures (including failed
gradient checks and bench guards), 2 on usage errors.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .acm_nn import ModulationVariant
from .bench import MIN_RUNS, SUITES, run_bench
from .config import load_config
from .dataset import SynthConfig, load_corpus, statistics, synth_generate, write_corpus
from .detectors import METHODS, build_detector, detect_batch
from .errors import CorpusLoadError, InvalidArgumentError
from .gradcheck import run_gradchecks
from .image_io import find_image, list_stems, read_image, read_mask, write_mask, write_saliency
from .metrics import default_thresholds, evaluate_masks, roc_sweep, write_roc_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad invocation: missing inputs, mismatched stems, invalid counts."""


def _write_json(data: dict, path: Path | None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True, default=_json_default)
    if path is None:
        print(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _detector(method: str, config_path: Path | None):
    if config_path is None:
        return build_detector(method)
    if not config_path.exists():
        raise UsageError(f"Config file not found: {config_path}")
    _, config_cls = METHODS[method]
    try:
        return build_detector(method, load_config(config_path, config_cls))
    except InvalidArgumentError as e:
        raise UsageError(str(e)) from e


def cmd_detect(args) -> int:
    if not args.input.is_file():
        raise UsageError(f"Input image not found: {args.input}")
    detector = _detector(args.method, args.config)
    image = read_image(args.input)
    detection = detector.detect(image)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.input.stem
    sidecar = write_saliency(args.out_dir / f"{stem}_saliency.png", detection.saliency)
    write_mask(args.out_dir / f"{stem}_mask.png", detection.mask)
    report = detection.to_dict() | {"input": str(args.input), "saliency_scale": sidecar}
    _write_json(report, args.out_dir / f"{stem}_detection.json")
    if not detection.converged:
        logger.warning(f"{args.method} did not converge on {args.input}")
    logger.info(f"{args.method} on {stem}: {int(detection.mask.sum())} mask pixels in {detection.total_ms:.1f} ms")
    return EXIT_OK


def _matched_stems(pred_dir: Path, gt_dir: Path) -> list[str]:
    for directory in (pred_dir, gt_dir):
        if not directory.is_dir():
            raise UsageError(f"Directory not found: {directory}")
    pred_stems, gt_stems = set(list_stems(pred_dir)), set(list_stems(gt_dir))
    if pred_stems != gt_stems:
        offenders = sorted(pred_stems ^ gt_stems)
        raise UsageError(f"Prediction and ground-truth stems differ: {', '.join(offenders)}")
    if not pred_stems:
        raise UsageError(f"No images found in {pred_dir}")
    return sorted(pred_stems)


def cmd_eval(args) -> int:
    stems = _matched_stems(args.pred_dir, args.gt_dir)
    preds = [read_mask(find_image(args.pred_dir, stem)) for stem in stems]
    gts = [read_mask(find_image(args.gt_dir, stem)) for stem in stems]
    report = evaluate_masks(preds, gts, stems, empty_score=args.empty_score)
    _write_json(report.to_dict(), args.out)
    logger.info(f"IoU {report.iou:.4f}, nIoU {report.niou:.4f} over {len(stems)} samples")
    return EXIT_OK


def _parse_thresholds(text: str) -> int | list[float]:
    try:
        if "," in text:
            return [float(t) for t in text.split(",") if t.strip()]
        return int(text)
    except ValueError as e:
        raise UsageError(f"--thresholds must be a count or a comma-separated list, got {text!r}") from e


def cmd_roc(args) -> int:
    if not args.corpus.is_dir():
        raise UsageError(f"Corpus directory not found: {args.corpus}")
    thresholds = _parse_thresholds(args.thresholds)
    detector = _detector(args.method, args.config)
    samples = load_corpus(args.corpus, None if args.no_manifest else "splits.json", validate_splits=False)
    if args.split:
        samples = [s for s in samples if s.split == args.split]
    if not samples:
        raise UsageError(f"No samples selected from {args.corpus}")

    detections = detect_batch(detector, [s.image for s in samples])
    maps = [d.saliency for d in detections]
    if isinstance(thresholds, int):
        thresholds = default_thresholds(maps, thresholds)
    try:
        points = roc_sweep(maps, [s.semantic_mask for s in samples], thresholds)
    except InvalidArgumentError as e:
        raise UsageError(str(e)) from e
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_roc_csv(points, args.out)
    logger.info(f"Wrote {len(points)} ROC points to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.runs < MIN_RUNS:
        raise UsageError(f"--runs must be at least {MIN_RUNS}, got {args.runs}")
    kwargs = {"size": args.size} if args.size and args.suite != "rpca" else {}
    report = run_bench(args.suite, args.runs, **kwargs)
    _write_json(report.to_dict(), args.out)
    report.raise_for_guards()
    logger.info(f"Bench {args.suite}: speedup {report.speedup or 0.0:.2f}x")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.config and not args.config.exists():
        raise UsageError(f"Config file not found: {args.config}")
    config = load_config(args.config, SynthConfig) if args.config else SynthConfig()
    update = {k: v for k, v in (("seed", args.seed), ("count", args.count)) if v is not None}
    config = config.model_copy(update=update)
    samples = synth_generate(config)
    manifest = write_corpus(samples, args.out_dir)
    logger.info(f"Wrote {len(samples)} scenes and {manifest}")
    return EXIT_OK


def cmd_stats(args) -> int:
    if not args.corpus.is_dir():
        raise UsageError(f"Corpus directory not found: {args.corpus}")
    samples = load_corpus(args.corpus, None if args.no_manifest else "splits.json")
    if not samples:
        raise UsageError(f"Corpus {args.corpus} is empty")
    _write_json(statistics(samples).to_dict(), args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    variants = [ModulationVariant(v) for v in args.variant] if args.variant else None
    reports = run_gradchecks(variants, seed=args.seed)
    result = {
        "passed": all(r.passed for r in reports),
        "max_errors": {r.subject: r.max_error for r in reports},
        "reports": [r.to_dict() for r in reports],
    }
    _write_json(result, args.out)
    if not result["passed"]:
        failed = [r.subject for r in reports if not r.passed]
        logger.error(f"Gradient check failed for {', '.join(failed)}")
        return EXIT_FAILURE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irstd", description="Infrared small-target detection toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    detect = commands.add_parser("detect", help="run one detector on one image")
    detect.add_argument("--method", required=True, choices=sorted(METHODS))
    detect.add_argument("--input", required=True, type=Path)
    detect.add_argument("--config", type=Path, help="JSON file with the method's settings")
    detect.add_argument("--out-dir", required=True, type=Path)
    detect.set_defaults(handler=cmd_detect)

    evaluate = commands.add_parser("eval", help="IoU and nIoU of predicted masks")
    evaluate.add_argument("--pred-dir", required=True, type=Path)
    evaluate.add_argument("--gt-dir", required=True, type=Path)
    evaluate.add_argument("--out", type=Path, help="JSON output (stdout if omitted)")
    evaluate.add_argument("--empty-score", type=float, default=1.0,
                          help="nIoU contribution of a sample with no target and no prediction")
    evaluate.set_defaults(handler=cmd_eval)

    roc = commands.add_parser("roc", help="Pd/Fa sweep of a detector over a corpus")
    roc.add_argument("--method", required=True, choices=sorted(METHODS))
    roc.add_argument("--corpus", required=True, type=Path)
    roc.add_argument("--thresholds", default="50", help="threshold count or comma-separated descending list")
    roc.add_argument("--config", type=Path)
    roc.add_argument("--split", choices=["train", "val", "test"])
    roc.add_argument("--no-manifest", action="store_true", help="use every stem under images/")
    roc.add_argument("--out", required=True, type=Path, help="CSV output")
    roc.set_defaults(handler=cmd_roc)

    bench = commands.add_parser("bench", help="time accelerated paths against baselines")
    bench.add_argument("--suite", required=True, choices=SUITES)
    bench.add_argument("--runs", type=int, default=10)
    bench.add_argument("--size", type=int, help="image side for the mpcm and ript-stop suites")
    bench.add_argument("--out", type=Path, help="JSON output (stdout if omitted)")
    bench.set_defaults(handler=cmd_bench)

    synth = commands.add_parser("synth", help="write a synthetic annotated corpus")
    synth.add_argument("--out-dir", required=True, type=Path)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--count", type=int)
    synth.add_argument("--config", type=Path, help="JSON file with generator settings")
    synth.set_defaults(handler=cmd_synth)

    stats = commands.add_parser("stats", help="target count, size and brightness statistics")
    stats.add_argument("--corpus", required=True, type=Path)
    stats.add_argument("--no-manifest", action="store_true")
    stats.add_argument("--out", type=Path)
    stats.set_defaults(handler=cmd_stats)

    gradcheck = commands.add_parser("gradcheck", help="finite-difference check of the fusion block")
    gradcheck.add_argument("--variant", action="append", choices=[v.value for v in ModulationVariant])
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--out", type=Path)
    gradcheck.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    try:
        return args.handler(args)
    except UsageError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except CorpusLoadError as e:
        logger.error(f"Failed to load {e.path}: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        logger.debug("Traceback:", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
