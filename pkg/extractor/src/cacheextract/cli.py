"""CLI for exporting image datasets to embedding-cache directories."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from cacheextract.extract import ExtractionJob, build_text_classifier, extract_image_features, scan_dataset
from cacheextract.templates import DEFAULT_TEMPLATES, load_templates


def _parse_checkpoints(backbones: str, checkpoints: str) -> dict[str, Path]:
    """--backbones a,b plus --checkpoints a=/path,b=/path."""
    ids = [b.strip() for b in backbones.split(",") if b.strip()]
    mapping = {}
    for pair in checkpoints.split(","):
        pair = pair.strip()
        if not pair:
            continue
        if "=" not in pair:
            raise ValueError(
                f"--checkpoints entries must be backbone=path, got {pair!r}"
            )
        bid, path = pair.split("=", 1)
        mapping[bid.strip()] = Path(path)
    missing = [b for b in ids if b not in mapping]
    if missing:
        raise ValueError(f"--checkpoints missing entries for backbones {missing}")
    for bid in ids:
        if not mapping[bid].is_dir():
            raise ValueError(f"checkpoint for {bid} not found: {mapping[bid]}")
    return {bid: mapping[bid] for bid in ids}


def cmd_extract(args) -> int:
    backbones = _parse_checkpoints(args.backbones, args.checkpoints)
    templates = (
        load_templates(args.templates) if args.templates else list(DEFAULT_TEMPLATES)
    )
    out = Path(args.out)
    job = ExtractionJob(
        dataset=Path(args.dataset),
        backbones=backbones,
        output=out,
        classifier_output=Path(args.classifier_out)
        if args.classifier_out
        else out.with_name(out.name + "-classifier"),
        templates=templates,
        write_labels=args.labels,
        batch_size=args.batch_size,
        device=args.device,
    )
    cache_dir = extract_image_features(job)
    print(f"wrote cache {cache_dir}")
    class_names, _, _ = scan_dataset(job.dataset)
    clf_dir = build_text_classifier(job, class_names)
    print(f"wrote classifier {clf_dir}")
    return 0


def cmd_toy_checkpoint(args) -> int:
    from cacheextract.toyckpt import build_toy_checkpoint

    path = build_toy_checkpoint(args.out, embed_dim=args.dim, seed=args.seed)
    print(f"wrote toy checkpoint {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cacheextract",
        description="Export folder-per-class image datasets to the embedding-cache format.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="encode a dataset and its class prompts")
    p.add_argument("--dataset", required=True, help="dataset root (class subfolders)")
    p.add_argument("--backbones", required=True,
                   help="comma-separated backbone ids, e.g. vitb16,rn50")
    p.add_argument("--checkpoints", required=True,
                   help="backbone=checkpoint-dir pairs, comma-separated")
    p.add_argument("--templates", help="prompt templates file, one per line")
    p.add_argument("--out", required=True, help="output cache directory")
    p.add_argument("--classifier-out", dest="classifier_out",
                   help="output classifier directory (default: <out>-classifier)")
    p.add_argument("--labels", action="store_true",
                   help="write folder-derived ground-truth labels (evaluation only)")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("toy-checkpoint",
                       help="build a tiny random checkpoint for offline smoke tests")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy_checkpoint)

    return ap


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
