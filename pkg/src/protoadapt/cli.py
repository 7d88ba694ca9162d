"""Command-line entry point for the full adaptation pipeline.

Subcommands: validate, pseudo-label, prototypes, train, predict, eval,
ablate, sweep, synth. Exit codes: 0 success, 1 runtime/I/O failure,
2 invalid input or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from protoadapt import cache as cachemod
from protoadapt.cache import CacheError, load_cache, load_classifier, validate
from protoadapt.pseudolabel import (
    load_pseudolabels,
    save_pseudolabels,
    score_cache,
    select_top_k,
)
from protoadapt.prototype import estimate_prototypes, load_prototypes, save_prototypes
from protoadapt.adapter import (
    TrainConfig,
    load_adapter,
    predict,
    save_adapter,
    train,
)
from protoadapt.evaluation import (
    SyntheticSpec,
    eval_cross_cache,
    generate_synthetic,
    pseudo_label_precision,
    run_ablation,
    run_k_sweep,
)
from protoadapt import report as reportmod

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2

# built-in defaults; overridden by config file, then by explicit CLI flags
DEFAULTS = {
    "k": 16,
    "tau": 0.01,
    "eta": 5.5,
    "beta": 1.0,
    "epochs": 20,
    "batch_size": 256,
    "learning_rate": 1e-3,
    "lr_schedule": "cosine",
    "optimizer": "adaptive-moment",
    "seed": 0,
    "shuffle": True,
    "rank_by": "probability",
    "init": "prototype",
    "mode": "fused",
    "labeling_backbone": "vitb16",
    "model_backbone": "vitb16",
    "profile": "default",
    "jobs": 1,
    "k_values": "4,8,16,32",
}


class ConfigError(Exception):
    pass


def _merge_config(args: argparse.Namespace) -> dict:
    """Resolve precedence: CLI flag > config file > built-in default."""
    merged = dict(DEFAULTS)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        if not Path(cfg_path).is_file():
            raise ConfigError(f"--config: no such file {cfg_path}")
        try:
            doc = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"--config: invalid JSON in {cfg_path}: {e}") from None
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(
                f"--config: unknown keys {sorted(unknown)} in {cfg_path}"
            )
        merged.update(doc)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if merged["profile"] == "imagenet" and getattr(args, "epochs", None) is None and (
        not cfg_path or "epochs" not in doc
    ):
        merged["epochs"] = 30
    return merged


def _train_config(m: dict) -> TrainConfig:
    return TrainConfig(
        epochs=int(m["epochs"]),
        batch_size=int(m["batch_size"]),
        learning_rate=float(m["learning_rate"]),
        lr_schedule=m["lr_schedule"],
        optimizer=m["optimizer"],
        seed=int(m["seed"]),
        shuffle=bool(m["shuffle"]),
    )


def _need(path: str | None, flag: str, kind: str = "path"):
    if path is None:
        raise ConfigError(f"{flag} is required")
    if not Path(path).exists():
        raise ConfigError(f"{flag}: no such {kind} {path}")
    return Path(path)


def _add_common(p: argparse.ArgumentParser, train_flags: bool = False) -> None:
    p.add_argument("--config", help="JSON config file with flat keys mirroring flags")
    p.add_argument("--labeling-backbone", dest="labeling_backbone",
                   help=f"backbone for pseudo-labeling (default {DEFAULTS['labeling_backbone']})")
    p.add_argument("--model-backbone", dest="model_backbone",
                   help=f"backbone for training/inference (default {DEFAULTS['model_backbone']})")
    p.add_argument("--k", type=int, help=f"selected samples per class (default {DEFAULTS['k']})")
    p.add_argument("--tau", type=float, help=f"softmax temperature (default {DEFAULTS['tau']})")
    p.add_argument("--eta", type=float, help=f"affinity sharpness (default {DEFAULTS['eta']})")
    p.add_argument("--beta", type=float, help=f"residual ratio (default {DEFAULTS['beta']})")
    p.add_argument("--seed", type=int, help=f"master seed (default {DEFAULTS['seed']})")
    if train_flags:
        p.add_argument("--epochs", type=int,
                       help=f"training epochs (default {DEFAULTS['epochs']}, 30 with --profile imagenet)")
        p.add_argument("--batch-size", dest="batch_size", type=int,
                       help=f"mini-batch size (default {DEFAULTS['batch_size']})")
        p.add_argument("--lr", dest="learning_rate", type=float,
                       help=f"learning rate (default {DEFAULTS['learning_rate']})")
        p.add_argument("--lr-schedule", dest="lr_schedule", choices=["constant", "cosine"],
                       help=f"learning rate schedule (default {DEFAULTS['lr_schedule']})")
        p.add_argument("--optimizer", choices=["plain-gradient-descent", "adaptive-moment"],
                       help=f"optimizer (default {DEFAULTS['optimizer']})")
        p.add_argument("--no-shuffle", dest="shuffle", action="store_const", const=False,
                       help="disable per-epoch shuffling")
        p.add_argument("--profile", choices=["default", "imagenet"],
                       help="dataset profile; imagenet raises default epochs to 30")


def cmd_validate(args) -> int:
    path = _need(args.cache, "--cache", "directory")
    cache = load_cache(path)
    problems = validate(cache)
    if problems:
        for p in problems:
            print(p)
        return EXIT_INVALID
    print(
        f"ok: {cache.num_samples} samples, {cache.num_classes} classes, "
        f"backbones {sorted(cache.features)}"
    )
    return EXIT_OK


def cmd_pseudo_label(args) -> int:
    m = _merge_config(args)
    cache = load_cache(_need(args.cache, "--cache", "directory"))
    clf = load_classifier(_need(args.classifier, "--classifier", "directory"))
    scores = score_cache(cache, clf, m["labeling_backbone"], float(m["tau"]))
    labels = select_top_k(
        scores, int(m["k"]), m["labeling_backbone"], m["rank_by"]
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_pseudolabels(labels, out)
    print(f"wrote {out}")
    for c, n in sorted(labels.counts().items()):
        print(f"  class {c} ({cache.class_names[c]}): {n} selected")
    if cache.gt_labels is not None and not (cache.gt_labels == cachemod.UNKNOWN_LABEL).any():
        overall, _ = pseudo_label_precision(labels, cache)
        print(f"selection precision: {overall:.4f}")
    return EXIT_OK


def cmd_prototypes(args) -> int:
    m = _merge_config(args)
    cache = load_cache(_need(args.cache, "--cache", "directory"))
    labels = load_pseudolabels(_need(args.pseudolabels, "--pseudolabels", "file"))
    fallback = None
    if args.classifier:
        clf = load_classifier(_need(args.classifier, "--classifier", "directory"))
        fallback = clf.backbone(m["model_backbone"]).data
    bank = estimate_prototypes(cache, labels, m["model_backbone"], fallback)
    save_prototypes(bank, args.out)
    print(f"wrote {args.out}: {bank.num_classes} prototypes, d={bank.dims}")
    return EXIT_OK


def cmd_train(args) -> int:
    m = _merge_config(args)
    cache = load_cache(_need(args.cache, "--cache", "directory"))
    clf = load_classifier(_need(args.classifier, "--classifier", "directory"))
    cfg = _train_config(m)
    if args.pipeline:
        scores = score_cache(cache, clf, m["labeling_backbone"], float(m["tau"]))
        labels = select_top_k(scores, int(m["k"]), m["labeling_backbone"], m["rank_by"])
        bank = estimate_prototypes(
            cache, labels, m["model_backbone"],
            text_fallback=clf.backbone(m["model_backbone"]).data,
        )
    else:
        labels = load_pseudolabels(_need(args.pseudolabels, "--pseudolabels", "file"))
        bank = load_prototypes(_need(args.prototypes, "--prototypes", "directory"))
    model, history = train(
        cache, labels, bank, clf, m["model_backbone"], cfg,
        float(m["eta"]), float(m["beta"]), m["init"],
    )
    out = Path(args.out)
    save_adapter(model, out)
    history.save_csv(out / "history.csv")
    reportmod.plot_history(history, out / "history.png")
    if args.pipeline:
        save_pseudolabels(labels, out / "pseudolabels.json")
        save_prototypes(bank, out / "prototypes")
    final = history.epochs[-1]
    print(f"wrote {out}; final train accuracy {final['train_acc']:.4f}, loss {final['loss']:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    m = _merge_config(args)
    model = load_adapter(_need(args.adapter, "--adapter", "directory"))
    cache = load_cache(_need(args.cache, "--cache", "directory"))
    clf = load_classifier(_need(args.classifier, "--classifier", "directory"))
    feats = cache.backbone(m["model_backbone"]).data
    pred = predict(model, feats, clf.backbone(m["model_backbone"]).data, m["mode"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("sample_id,predicted_class,predicted_name\n")
        for sid, p in zip(cache.sample_ids, pred):
            fh.write(f"{sid},{p},{cache.class_names[p]}\n")
    print(f"wrote {out} ({len(pred)} predictions)")
    return EXIT_OK


def cmd_eval(args) -> int:
    m = _merge_config(args)
    model = load_adapter(_need(args.adapter, "--adapter", "directory"))
    cache = load_cache(_need(args.cache, "--cache", "directory"))
    clf = load_classifier(_need(args.classifier, "--classifier", "directory"))
    rep = eval_cross_cache(model, cache, clf, m["model_backbone"], m["mode"])
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    text = reportmod.format_report(rep, cache.class_names)
    (outdir / "report.txt").write_text(text, encoding="utf-8")
    reportmod.write_report_json({"eval": rep}, outdir / "report.json")
    reportmod.write_table_csv({"eval": rep}, outdir / "report.csv", "run")
    reportmod.plot_per_class(rep, outdir / "per_class.png", cache.class_names)
    print(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    m = _merge_config(args)
    train_cache = load_cache(_need(args.train_cache, "--train-cache", "directory"))
    test_cache = load_cache(_need(args.test_cache, "--test-cache", "directory"))
    clf = load_classifier(_need(args.classifier, "--classifier", "directory"))
    reports = run_ablation(
        train_cache, test_cache, clf,
        m["labeling_backbone"], m["model_backbone"],
        int(m["k"]), float(m["tau"]), float(m["eta"]), float(m["beta"]),
        _train_config(m),
    )
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    text = reportmod.format_table(reports, "mode")
    (outdir / "ablation.txt").write_text(text, encoding="utf-8")
    reportmod.write_table_csv(reports, outdir / "ablation.csv", "mode")
    reportmod.write_report_json(reports, outdir / "ablation.json")
    reportmod.plot_modes(reports, outdir / "ablation.png")
    print(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    m = _merge_config(args)
    train_cache = load_cache(_need(args.train_cache, "--train-cache", "directory"))
    test_cache = load_cache(_need(args.test_cache, "--test-cache", "directory"))
    clf = load_classifier(_need(args.classifier, "--classifier", "directory"))
    try:
        k_values = [int(s) for s in str(m["k_values"]).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--k-values: expected comma-separated ints, got {m['k_values']!r}")
    if not k_values or any(k <= 0 for k in k_values):
        raise ConfigError(f"--k-values must be positive ints, got {m['k_values']!r}")
    cfg = _train_config(m)
    jobs = max(1, int(m["jobs"]))

    def one(k):
        return k, run_k_sweep(
            train_cache, test_cache, clf, [k],
            m["labeling_backbone"], m["model_backbone"],
            float(m["tau"]), float(m["eta"]), float(m["beta"]), cfg,
        )[k]

    if jobs == 1:
        reports = dict(one(k) for k in k_values)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            reports = dict(ex.map(one, k_values))
    reports = {k: reports[k] for k in k_values}
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    text = reportmod.format_table(reports, "k")
    (outdir / "sweep.txt").write_text(text, encoding="utf-8")
    reportmod.write_table_csv(reports, outdir / "sweep.csv", "k")
    reportmod.write_report_json(reports, outdir / "sweep.json")
    reportmod.plot_sweep(reports, outdir / "sweep.png")
    print(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes,
        dims=args.dims,
        concentration=args.concentration,
        samples_per_class=args.samples_per_class,
        text_angle=args.angle,
        seed=args.seed if args.seed is not None else 42,
    )
    outdir = Path(args.out_dir)
    splits = [s.strip() for s in args.splits.split(",") if s.strip()]
    classifier = None
    for split in splits:
        cache, classifier = generate_synthetic(spec, split)
        cachemod.save_cache(cache, outdir / split)
        print(f"wrote {outdir / split}: {cache.num_samples} samples")
    if classifier is not None:
        cachemod.save_classifier(classifier, outdir / "classifier")
        print(f"wrote {outdir / 'classifier'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="protoadapt",
        description="Adapt a frozen vision-language classifier to an unlabeled "
        "embedding cache via pseudo-labeling, prototypes, and a residual adapter.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a cache directory against the format invariants")
    p.add_argument("--cache", required=True, help="cache directory")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("pseudo-label", help="score samples and select top-K per class")
    p.add_argument("--cache", help="cache directory")
    p.add_argument("--classifier", help="text classifier directory")
    p.add_argument("--out", default="pseudolabels.json", help="output JSON path")
    p.add_argument("--rank-by", dest="rank_by", choices=["probability", "similarity"],
                   help=f"confidence ranking (default {DEFAULTS['rank_by']})")
    _add_common(p)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("prototypes", help="estimate class prototypes from a selection")
    p.add_argument("--cache", help="cache directory")
    p.add_argument("--pseudolabels", help="pseudolabels.json path")
    p.add_argument("--classifier", help="enables text-feature fallback for empty classes")
    p.add_argument("--out", default="prototypes", help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_prototypes)

    p = sub.add_parser("train", help="train the residual adapter")
    p.add_argument("--cache", help="cache directory")
    p.add_argument("--classifier", help="text classifier directory")
    p.add_argument("--pseudolabels", help="existing pseudolabels.json")
    p.add_argument("--prototypes", help="existing prototype directory")
    p.add_argument("--pipeline", action="store_true",
                   help="generate pseudo-labels and prototypes in-pipeline")
    p.add_argument("--init", choices=["prototype", "random"],
                   help=f"weight initialization (default {DEFAULTS['init']})")
    p.add_argument("--rank-by", dest="rank_by", choices=["probability", "similarity"],
                   help=f"confidence ranking (default {DEFAULTS['rank_by']})")
    p.add_argument("--out", default="adapter", help="output directory")
    _add_common(p, train_flags=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label a cache with a trained adapter")
    p.add_argument("--adapter", help="adapter directory")
    p.add_argument("--cache", help="cache directory")
    p.add_argument("--classifier", help="text classifier directory")
    p.add_argument("--mode", choices=["fused", "adapter_only", "clip_only"],
                   help=f"logit mode (default {DEFAULTS['mode']})")
    p.add_argument("--out", default="predictions.csv", help="output CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a trained adapter on a labeled cache")
    p.add_argument("--adapter", help="adapter directory")
    p.add_argument("--cache", help="labeled evaluation cache")
    p.add_argument("--classifier", help="text classifier directory")
    p.add_argument("--mode", choices=["fused", "adapter_only", "clip_only"],
                   help=f"logit mode (default {DEFAULTS['mode']})")
    p.add_argument("--out-dir", default="eval_report", help="report output directory")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the five component configurations")
    p.add_argument("--train-cache", help="unlabeled training cache")
    p.add_argument("--test-cache", help="labeled evaluation cache")
    p.add_argument("--classifier", help="text classifier directory")
    p.add_argument("--out-dir", default="ablation", help="report output directory")
    _add_common(p, train_flags=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="full pipeline once per selection size k")
    p.add_argument("--train-cache", help="unlabeled training cache")
    p.add_argument("--test-cache", help="labeled evaluation cache")
    p.add_argument("--classifier", help="text classifier directory")
    p.add_argument("--k-values", dest="k_values",
                   help=f"comma-separated k values (default {DEFAULTS['k_values']})")
    p.add_argument("--jobs", type=int, help="parallel sweep cells (default 1)")
    p.add_argument("--out-dir", default="sweep", help="report output directory")
    _add_common(p, train_flags=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate the synthetic fixture caches")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--concentration", type=float, default=2.5)
    p.add_argument("--samples-per-class", dest="samples_per_class", type=int, default=100)
    p.add_argument("--angle", type=float, default=0.6,
                   help="text-feature perturbation angle in radians")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--splits", default="train,test",
                   help="comma-separated splits: train, test, variant")
    p.set_defaults(func=cmd_synth)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CacheError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
