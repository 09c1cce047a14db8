"""Command-line interface.

Subcommands: ``train`` fits a model bundle from landmark and product files,
``infer`` audits imagesets against a bundle, ``eval`` scores detected missing
sets against human labels, ``synth`` generates a labeled synthetic corpus,
``inspect`` summarizes a bundle, and ``validate`` checks a landmark file
against the schema.  Machine-readable output is line-delimited JSON; human
commentary goes to stderr, controlled by the ``UNPOSE_LOG`` environment
variable.  Exit codes: 0 success, 1 pipeline failure, 2 usage error.  Output
files are written to a temp file and renamed, so failures never leave partial
artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from typing import Optional, Sequence

from .bundle_io import load_bundle, save_bundle
from .errors import UnposeError
from .landmarks import (
    POSE2D17,
    POSE3D33,
    LandmarkRecord,
    parse_landmark_records,
    serialize_landmark_records,
)
from .pipeline import (
    TrainConfig,
    evaluate,
    infer_flow,
    parse_label_records,
    parse_product_records,
    serialize_missing_report,
    train_flow,
)
from .synth import CorpusSpec, generate_corpus

log = logging.getLogger("unpose")

_LOG_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "none": logging.CRITICAL + 10,
}


def _setup_logging() -> None:
    level_name = os.environ.get("UNPOSE_LOG", "warning").lower()
    level = _LOG_LEVELS.get(level_name, logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s")


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".out-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _read_landmarks(path: str) -> list[LandmarkRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        result = parse_landmark_records(fh)
    for diag in result.diagnostics:
        if diag.severity == "error":
            log.error("%s", diag)
        else:
            log.warning("%s", diag)
    if result.errors:
        raise UnposeError(
            f"{len(result.errors)} malformed landmark line(s) in {path}; first: {result.errors[0]}"
        )
    return result.records


def _read_products(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        products, diagnostics = parse_product_records(fh)
    errors = [d for d in diagnostics if d.severity == "error"]
    for diag in diagnostics:
        log.error("%s", diag)
    if errors:
        raise UnposeError(f"{len(errors)} malformed product line(s) in {path}; first: {errors[0]}")
    return products


def cmd_train(args: argparse.Namespace) -> int:
    records = _read_landmarks(args.landmarks)
    products = _read_products(args.products)
    config = TrainConfig(
        k=args.k,
        seed=args.seed,
        topology=args.topology,
        use_autoencoder=not args.no_autoencoder,
        threads=args.threads,
    )
    bundle = train_flow(records, products, config)
    save_bundle(bundle, args.out)
    summary = bundle.training_summary.to_dict()
    summary["bundle"] = args.out
    print(json.dumps(summary, sort_keys=True))
    log.info("trained k=%d on %d images; objective %.6f", config.k, summary["n_images"], summary["objective"])
    return 0


def _group_by_product(records: Sequence[LandmarkRecord]) -> dict[str, list[LandmarkRecord]]:
    grouped: dict[str, list[LandmarkRecord]] = {}
    for r in records:
        grouped.setdefault(r.product_id, []).append(r)
    return grouped


def cmd_infer(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    records = _read_landmarks(args.landmarks)
    if not records:
        raise UnposeError(f"no images for product inference in {args.landmarks}")
    products = {p.product_id: p for p in _read_products(args.products)}
    grouped = _group_by_product(records)
    lines = []
    for product_id in sorted(grouped):
        meta = products.get(product_id)
        if meta is None:
            raise UnposeError(f"no product metadata for '{product_id}'")
        report = infer_flow(bundle, grouped[product_id], meta)
        lines.append(serialize_missing_report(report))
    text = "".join(line + "\n" for line in lines)
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    log.info("audited %d product imageset(s)", len(lines))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    records = _read_landmarks(args.landmarks)
    products = {p.product_id: p for p in _read_products(args.products)}
    with open(args.labels, "r", encoding="utf-8") as fh:
        labels, diagnostics = parse_label_records(fh)
    errors = [d for d in diagnostics if d.severity == "error"]
    if errors:
        raise UnposeError(f"{len(errors)} malformed label line(s) in {args.labels}; first: {errors[0]}")
    grouped = _group_by_product(records)
    labeled_sets = []
    for product_id in sorted(labels):
        meta = products.get(product_id)
        if meta is None:
            raise UnposeError(f"no product metadata for labeled product '{product_id}'")
        labeled_sets.append((grouped.get(product_id, []), meta, labels[product_id]))
    report = evaluate(bundle, labeled_sets)
    for warning in report.warnings:
        log.warning("%s", warning)
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in report.per_set]
    lines.append(
        json.dumps(
            {
                "aggregate": {
                    "mean_accuracy": report.mean_accuracy,
                    "mean_precision": report.mean_precision,
                    "mean_recall": report.mean_recall,
                    "n_sets": len(report.per_set),
                }
            },
            sort_keys=True,
        )
    )
    text = "".join(line + "\n" for line in lines)
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _sibling_path(out: str, tag: str) -> str:
    stem, ext = os.path.splitext(out)
    return f"{stem}.{tag}{ext or '.jsonl'}"


def cmd_synth(args: argparse.Namespace) -> int:
    spec = CorpusSpec(
        classes=tuple(range(args.classes)),
        per_class=args.per_class,
        noise_sigma=args.noise,
        topology=args.topology,
        seed=args.seed,
    )
    records, ground_truth, products = generate_corpus(spec)
    _write_atomic(args.out, serialize_landmark_records(records))

    products_path = args.products_out or _sibling_path(args.out, "products")
    product_lines = [
        json.dumps(
            {
                "product_id": p.product_id,
                "category": p.category,
                "subcategory": p.subcategory,
                "product_type": p.product_type,
                "avg_rating": p.avg_rating,
                "num_reviews": p.num_reviews,
                "image_ids": list(p.image_ids),
            },
            sort_keys=True,
        )
        for p in products
    ]
    _write_atomic(products_path, "".join(line + "\n" for line in product_lines))

    truth_path = args.truth_out or _sibling_path(args.out, "truth")
    truth_lines = [
        json.dumps({"image_id": image_id, "class_id": class_id})
        for image_id, class_id in ground_truth.items()
    ]
    _write_atomic(truth_path, "".join(line + "\n" for line in truth_lines))

    print(
        json.dumps(
            {
                "landmarks": args.out,
                "products": products_path,
                "truth": truth_path,
                "n_records": len(records),
                "n_products": len(products),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    info = {
        "version": bundle.version,
        "k": bundle.centroid_model.n_clusters,
        "topology": bundle.feature_config.topology,
        "feature_dimension": bundle.feature_config.dimension,
        "feature_fingerprint": bundle.feature_config.fingerprint,
        "autoencoder": None,
        "rank_model": {"kind": bundle.rank_model.kind, "num_rounds": bundle.rank_model.num_rounds},
        "training_summary": bundle.training_summary.to_dict() if bundle.training_summary else None,
    }
    if bundle.autoencoder is not None:
        info["autoencoder"] = {
            "layer_dims_encoder": bundle.autoencoder.layer_dims_encoder,
            "layer_dims_decoder": bundle.autoencoder.layer_dims_decoder,
        }
    print(json.dumps(info, sort_keys=True))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    with open(args.landmarks, "r", encoding="utf-8") as fh:
        result = parse_landmark_records(fh)
    for diag in result.diagnostics:
        log.log(logging.ERROR if diag.severity == "error" else logging.WARNING, "%s", diag)
    print(
        json.dumps(
            {
                "records": len(result.records),
                "errors": len(result.errors),
                "warnings": len(result.warnings),
            },
            sort_keys=True,
        )
    )
    return 0 if not result.errors else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unpose",
        description="Discover canonical product-photo pose classes and audit imagesets for missing ones.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a model bundle from landmarks and product metadata")
    train.add_argument("--landmarks", required=True, help="landmark record file (JSON lines)")
    train.add_argument("--products", required=True, help="product metadata file (JSON lines)")
    train.add_argument("--out", required=True, help="output path for the model bundle")
    train.add_argument("--k", type=int, default=8, help="number of pose classes (default 8)")
    train.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    train.add_argument("--topology", choices=[POSE3D33, POSE2D17], default=POSE3D33)
    train.add_argument("--no-autoencoder", action="store_true", help="cluster raw embeddings")
    train.add_argument("--threads", type=int, default=1, help="parallelism degree (default 1)")
    train.set_defaults(func=cmd_train)

    infer = sub.add_parser("infer", help="report missing pose classes per product imageset")
    infer.add_argument("--model", required=True, help="trained model bundle")
    infer.add_argument("--landmarks", required=True, help="subject landmark file")
    infer.add_argument("--products", required=True, help="product metadata file")
    infer.add_argument("--out", default=None, help="output report path (default stdout)")
    infer.set_defaults(func=cmd_infer)

    ev = sub.add_parser("eval", help="score detected missing sets against human labels")
    ev.add_argument("--model", required=True)
    ev.add_argument("--landmarks", required=True)
    ev.add_argument("--products", required=True)
    ev.add_argument("--labels", required=True, help="label file: product_id, true_missing")
    ev.add_argument("--out", default=None, help="output report path (default stdout)")
    ev.set_defaults(func=cmd_eval)

    synth = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    synth.add_argument("--out", required=True, help="output landmark file path")
    synth.add_argument("--classes", type=int, default=8, help="number of classes, uses ids 0..n-1")
    synth.add_argument("--per-class", type=int, default=100, dest="per_class")
    synth.add_argument("--noise", type=float, default=0.02, help="jitter sigma in normalized units")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--topology", choices=[POSE3D33, POSE2D17], default=POSE3D33)
    synth.add_argument("--products-out", default=None, dest="products_out")
    synth.add_argument("--truth-out", default=None, dest="truth_out")
    synth.set_defaults(func=cmd_synth)

    inspect = sub.add_parser("inspect", help="print a bundle summary")
    inspect.add_argument("--model", required=True)
    inspect.set_defaults(func=cmd_inspect)

    validate = sub.add_parser("validate", help="check a landmark file against the schema")
    validate.add_argument("--landmarks", required=True)
    validate.set_defaults(func=cmd_validate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UnposeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
