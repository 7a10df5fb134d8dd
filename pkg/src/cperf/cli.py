"""Command line interface: ``cperf run``, ``cperf validate`` and ``cperf synth``."""

import argparse
import json
import logging
import sys

from ._validation import CPerfError, DataError, ManifestError, NoBatchesError, PairingError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NO_BATCHES = 4

logger = logging.getLogger("cperf")


def _formats(value):
    items = [v.strip() for v in value.split(",") if v.strip()]
    bad = set(items) - {"json", "csv", "svg"}
    if bad:
        raise argparse.ArgumentTypeError(f"unknown formats: {sorted(bad)}")
    return tuple(items)


def _u64(value):
    v = int(value)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="cperf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="compare two datasets")
    run.add_argument("--config", help="JSON/YAML file with any of the flags below")
    run.add_argument("--manifest-a")
    run.add_argument("--manifest-b")
    run.add_argument("--preset", choices=["city128", "city256", "cones"])
    run.add_argument("--mode", choices=["segmentation", "detection"])
    run.add_argument("--patch-size", type=int)
    run.add_argument("--patches-per-image", type=int)
    run.add_argument("--threshold", type=float)
    run.add_argument("--min-batch", dest="min_batch_per_side", type=int)
    run.add_argument("--anchor-scale", type=float)
    run.add_argument("--grid", type=int)
    run.add_argument("--signature-grid", type=int)
    run.add_argument("--metric",
                     choices=["pixel_accuracy", "mean_iou", "detection_hit", "detection_iou"])
    run.add_argument("--estimator", choices=["mean_diff", "wasserstein"])
    run.add_argument("--weighting", choices=["equal", "size"])
    run.add_argument("--reference-side", choices=["a", "b", "both"])
    run.add_argument("--iou-min", type=float)
    run.add_argument("--conf-min", type=float)
    run.add_argument("--seed", type=_u64)
    run.add_argument("--jobs", type=int, help="worker threads (default $CPERF_JOBS or 1)")
    run.add_argument("--bootstrap", type=int)
    run.add_argument("--level", type=float)
    run.add_argument("--thumbnails", type=int)
    run.add_argument("--out")
    run.add_argument("--emit", type=_formats)

    val = sub.add_parser("validate", help="load a manifest and check its invariants")
    val.add_argument("--manifest", required=True)

    syn = sub.add_parser("synth", help="write a synthetic dataset")
    syn.add_argument("--images", type=int, default=4)
    syn.add_argument("--size", type=int, default=64)
    syn.add_argument("--classes", type=int, default=3)
    syn.add_argument("--pattern", choices=["blocks", "stripes", "boxes"], default="blocks")
    syn.add_argument("--corrupt", type=float, default=0.0)
    syn.add_argument("--seed", type=_u64, default=0)
    syn.add_argument("--mode", choices=["segmentation", "detection"],
                     default="segmentation")
    syn.add_argument("--name", default="synth")
    syn.add_argument("--boxes-per-image", type=int, default=4)
    syn.add_argument("--out", required=True)
    return parser


def _run(args):
    from .pipeline import RunConfig, run_comparison

    values = {}
    if args.config:
        values.update(RunConfig.from_file(args.config).to_dict())
    skip = {"command", "config", "verbose"}
    values.update({k: v for k, v in vars(args).items() if k not in skip and v is not None})
    config = RunConfig.from_mapping(values)
    if not config.manifest_a or not config.manifest_b:
        raise ValueError("--manifest-a and --manifest-b are required")
    if config.emit and not config.out:
        raise ValueError("--out is required to emit reports")
    result = run_comparison(config)
    summary = {
        "cperf_difference": result.cperf_difference,
        "batches_used": len(result.batch_errors),
        "batches_discarded": result.batches_discarded,
    }
    if result.per_class:
        names = result.config_echo.get("classes", [])
        summary["per_class"] = {names[c] if c < len(names) else c: v[0]
                                for c, v in result.per_class.items()}
    if result.bootstrap_ci:
        summary["bootstrap_ci"] = list(result.bootstrap_ci)
    print(json.dumps(summary, indent=2))


def _validate(args):
    from .ingest import class_histogram, load_dataset, load_manifest

    desc = load_manifest(args.manifest)
    ds = load_dataset(desc)
    print(json.dumps({
        "name": ds.name,
        "mode": ds.mode,
        "samples": len(ds.samples),
        "classes": list(ds.legend.names),
        "unmapped_pixels": sum(ds.unmapped_pixels.values()),
        "histogram": class_histogram(ds),
    }, indent=2))


def _synth(args):
    from .testkit.synth import SynthSpec, generate_synthetic

    spec = SynthSpec(images=args.images, size=args.size, classes=args.classes,
                     pattern=args.pattern, corrupt=args.corrupt, seed=args.seed,
                     mode=args.mode, name=args.name, boxes_per_image=args.boxes_per_image)
    ds = generate_synthetic(spec, args.out)
    print(f"wrote {len(ds.samples)} samples to {args.out}/manifest.json")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _run, "validate": _validate, "synth": _synth}[args.command]
    try:
        handler(args)
    except NoBatchesError as exc:
        print(f"cperf: {exc}", file=sys.stderr)
        return EXIT_NO_BATCHES
    except (ManifestError, DataError, PairingError, CPerfError, OSError) as exc:
        print(f"cperf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError) as exc:
        print(f"cperf: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
