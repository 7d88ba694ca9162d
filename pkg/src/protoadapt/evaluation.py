"""Metrics, synthetic fixtures, and the ablation / sweep / transfer harnesses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from protoadapt.cache import (
    CacheError,
    EmbeddingCache,
    FeatureMatrix,
    TextClassifier,
    UNKNOWN_LABEL,
    l2_normalize,
)
from protoadapt.pseudolabel import (
    DEFAULT_K,
    DEFAULT_TAU,
    PseudoLabelSet,
    score_cache,
    select_top_k,
)
from protoadapt.prototype import estimate_prototypes
from protoadapt.adapter import (
    DEFAULT_BETA,
    DEFAULT_ETA,
    AdapterModel,
    TrainConfig,
    init_adapter,
    predict,
    train,
)

# noise sub-streams per synthetic split; class means and text directions
# get their own streams so every split shares the same class structure
_SPLIT_STREAMS = {"train": 1, "test": 2, "variant": 3}
_MEANS_STREAM = 0
_TEXT_STREAM = 3


@dataclass
class EvalReport:
    """Top-1 accuracy with per-class breakdown and the config that produced it."""

    top1: float
    per_class_correct: list[int]
    per_class_total: list[int]
    n_evaluated: int
    mode: str = ""
    config: dict = field(default_factory=dict)

    @property
    def per_class_acc(self) -> list[float | None]:
        return [
            c / t if t else None
            for c, t in zip(self.per_class_correct, self.per_class_total)
        ]

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "per_class_acc": self.per_class_acc,
            "per_class_total": self.per_class_total,
            "n_evaluated": self.n_evaluated,
            "mode": self.mode,
            "config": self.config,
        }


@dataclass
class SyntheticSpec:
    """Parameters for the desk-scale synthetic embedding fixture."""

    num_classes: int = 10
    dims: int = 64
    concentration: float = 2.5
    samples_per_class: int = 100
    text_angle: float = 0.6  # radians between class mean and its text feature
    seed: int = 42

    def check(self) -> None:
        if self.num_classes < 1 or self.dims < 1 or self.samples_per_class < 1:
            raise ValueError("num_classes, dims, samples_per_class must all be >= 1")
        if self.concentration <= 0:
            raise ValueError(f"concentration must be positive, got {self.concentration}")


def top1_accuracy(
    pred, gt, num_classes: int | None = None, mode: str = "", config: dict | None = None
) -> EvalReport:
    """Exact top-1 fraction with per-class splits."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} predictions, {gt.shape[0]} labels")
    if (gt == UNKNOWN_LABEL).any():
        raise ValueError("ground truth contains unknown sentinels")
    c = num_classes if num_classes is not None else int(gt.max()) + 1 if gt.size else 0
    correct = [0] * c
    total = [0] * c
    for p, g in zip(pred, gt):
        total[g] += 1
        if p == g:
            correct[g] += 1
    n = int(gt.size)
    return EvalReport(
        top1=sum(correct) / n if n else 0.0,
        per_class_correct=correct,
        per_class_total=total,
        n_evaluated=n,
        mode=mode,
        config=config or {},
    )


def pseudo_label_precision(
    labels: PseudoLabelSet, cache: EmbeddingCache
) -> tuple[float, dict[int, float]]:
    """Fraction of selected samples whose pseudo-label matches ground truth.

    Classes with no selections are absent from the per-class map rather
    than reported as zero.
    """
    if cache.gt_labels is None:
        raise CacheError("cache has no ground-truth labels")
    per_class: dict[int, float] = {}
    n_total = n_correct = 0
    for cls, entries in labels.per_class.items():
        if not entries:
            continue
        hits = sum(1 for s, _ in entries if cache.gt_labels[s] == cls)
        per_class[cls] = hits / len(entries)
        n_correct += hits
        n_total += len(entries)
    overall = n_correct / n_total if n_total else 0.0
    return overall, per_class


def generate_synthetic(
    spec: SyntheticSpec,
    split: str = "train",
    backbone_id: str = "vitb16",
) -> tuple[EmbeddingCache, TextClassifier]:
    """Random unit class means, noisy unit image features, rotated text features.

    Splits share class means and text features (seeded sub-streams) but
    draw independent noise; the "variant" split doubles the noise scale
    to stand in for a distribution-shifted cache.
    """
    spec.check()
    if split not in _SPLIT_STREAMS:
        raise ValueError(f"unknown split {split!r}; expected one of {sorted(_SPLIT_STREAMS)}")
    c, d = spec.num_classes, spec.dims
    rng_means = np.random.default_rng(np.random.SeedSequence([spec.seed, _MEANS_STREAM]))
    means = l2_normalize(rng_means.standard_normal((c, d)))

    sigma = 1.0 / spec.concentration
    if split == "variant":
        sigma *= 2.0
    rng_noise = np.random.default_rng(
        np.random.SeedSequence([spec.seed, _SPLIT_STREAMS[split]])
    )
    feats, gt, ids = [], [], []
    for cls in range(c):
        x = means[cls] + sigma * rng_noise.standard_normal((spec.samples_per_class, d))
        feats.append(l2_normalize(x))
        gt.extend([cls] * spec.samples_per_class)
        ids.extend(
            f"{split}_c{cls:03d}_s{i:05d}" for i in range(spec.samples_per_class)
        )
    cache = EmbeddingCache(
        dataset_name=f"synthetic-{split}-seed{spec.seed}",
        sample_ids=ids,
        features={
            # float32 storage round-trip keeps save/load bitwise
            backbone_id: FeatureMatrix(
                np.vstack(feats).astype(np.float32).astype(np.float64)
            )
        },
        class_names=[f"class_{i:03d}" for i in range(c)],
        gt_labels=np.asarray(gt, dtype=np.int64),
    )

    rng_text = np.random.default_rng(np.random.SeedSequence([spec.seed, _TEXT_STREAM]))
    text = np.empty((c, d))
    for cls in range(c):
        w = rng_text.standard_normal(d)
        w -= (w @ means[cls]) * means[cls]
        w /= np.linalg.norm(w)
        text[cls] = np.cos(spec.text_angle) * means[cls] + np.sin(spec.text_angle) * w
    classifier = TextClassifier(
        class_names=cache.class_names,
        features={
            backbone_id: FeatureMatrix(text.astype(np.float32).astype(np.float64))
        },
        prompt_templates=["synthetic"],
        ensembled=False,
    )
    return cache, classifier


ABLATION_MODES = ("zero_shot", "adapter_only", "training_free", "no_init", "full")


def _zero_shot_predict(cache: EmbeddingCache, text: TextClassifier, backbone: str):
    feats = cache.backbone(backbone).data
    return (feats @ text.backbone(backbone).data.T).argmax(axis=1)


def _require_gt(cache: EmbeddingCache) -> np.ndarray:
    if cache.gt_labels is None or (cache.gt_labels == UNKNOWN_LABEL).any():
        raise CacheError("evaluation cache needs complete ground-truth labels")
    return cache.gt_labels


def run_pipeline(
    train_cache: EmbeddingCache,
    text: TextClassifier,
    labeling_backbone: str,
    model_backbone: str,
    k: int = DEFAULT_K,
    tau: float = DEFAULT_TAU,
    eta: float = DEFAULT_ETA,
    beta: float = DEFAULT_BETA,
    cfg: TrainConfig | None = None,
    init_mode: str = "prototype",
    rank_by: str = "probability",
) -> tuple[AdapterModel, PseudoLabelSet]:
    """Pseudo-label, build prototypes, train; the end-to-end adaptation path."""
    cfg = cfg or TrainConfig()
    scores = score_cache(train_cache, text, labeling_backbone, tau)
    labels = select_top_k(scores, k, labeling_backbone, rank_by)
    bank = estimate_prototypes(
        train_cache,
        labels,
        model_backbone,
        text_fallback=text.backbone(model_backbone).data,
    )
    model, _ = train(
        train_cache, labels, bank, text, model_backbone, cfg, eta, beta, init_mode
    )
    return model, labels


def run_ablation(
    train_cache: EmbeddingCache,
    test_cache: EmbeddingCache,
    text: TextClassifier,
    labeling_backbone: str,
    model_backbone: str,
    k: int = DEFAULT_K,
    tau: float = DEFAULT_TAU,
    eta: float = DEFAULT_ETA,
    beta: float = DEFAULT_BETA,
    cfg: TrainConfig | None = None,
) -> dict[str, EvalReport]:
    """The five component configurations, sharing one pseudo-label pass."""
    cfg = cfg or TrainConfig()
    gt = _require_gt(test_cache)
    test_feats = test_cache.backbone(model_backbone).data
    text_feats = text.backbone(model_backbone).data

    scores = score_cache(train_cache, text, labeling_backbone, tau)
    labels = select_top_k(scores, k, labeling_backbone)
    bank = estimate_prototypes(
        train_cache, labels, model_backbone, text_fallback=text_feats
    )
    proto_model = init_adapter(bank, eta=eta, beta=beta)
    trained, _ = train(
        train_cache, labels, bank, text, model_backbone, cfg, eta, beta, "prototype"
    )
    trained_rand, _ = train(
        train_cache, labels, bank, text, model_backbone, cfg, eta, beta, "random"
    )

    echo = {
        "k": k, "tau": tau, "eta": eta, "beta": beta,
        "epochs": cfg.epochs, "seed": cfg.seed,
        "labeling_backbone": labeling_backbone, "model_backbone": model_backbone,
    }
    c = test_cache.num_classes
    preds = {
        "zero_shot": _zero_shot_predict(test_cache, text, model_backbone),
        "adapter_only": predict(trained, test_feats, text_feats, "adapter_only"),
        "training_free": predict(proto_model, test_feats, text_feats, "fused"),
        "no_init": predict(trained_rand, test_feats, text_feats, "fused"),
        "full": predict(trained, test_feats, text_feats, "fused"),
    }
    return {
        mode: top1_accuracy(preds[mode], gt, c, mode=mode, config=echo)
        for mode in ABLATION_MODES
    }


def run_k_sweep(
    train_cache: EmbeddingCache,
    test_cache: EmbeddingCache,
    text: TextClassifier,
    k_values: list[int],
    labeling_backbone: str,
    model_backbone: str,
    tau: float = DEFAULT_TAU,
    eta: float = DEFAULT_ETA,
    beta: float = DEFAULT_BETA,
    cfg: TrainConfig | None = None,
) -> dict[int, EvalReport]:
    """One full pipeline run per selection size k; everything else shared."""
    cfg = cfg or TrainConfig()
    gt = _require_gt(test_cache)
    test_feats = test_cache.backbone(model_backbone).data
    text_feats = text.backbone(model_backbone).data
    out = {}
    for k in k_values:
        model, _ = run_pipeline(
            train_cache, text, labeling_backbone, model_backbone,
            k=k, tau=tau, eta=eta, beta=beta, cfg=cfg,
        )
        pred = predict(model, test_feats, text_feats, "fused")
        out[k] = top1_accuracy(
            pred, gt, test_cache.num_classes, mode=f"k={k}",
            config={"k": k, "tau": tau, "eta": eta, "beta": beta,
                    "epochs": cfg.epochs, "seed": cfg.seed},
        )
    return out


def eval_cross_cache(
    model: AdapterModel,
    target_cache: EmbeddingCache,
    text: TextClassifier,
    model_backbone: str,
    mode: str = "fused",
    source_class_names: list[str] | None = None,
) -> EvalReport:
    """Evaluate a trained adapter on a shifted cache without retraining."""
    names = source_class_names if source_class_names is not None else text.class_names
    if target_cache.class_names != names:
        for i, (a, b) in enumerate(zip(names, target_cache.class_names)):
            if a != b:
                raise CacheError(
                    f"class list mismatch at index {i}: source {a!r} vs target {b!r}"
                )
        raise CacheError(
            f"class list length mismatch: source {len(names)}, "
            f"target {len(target_cache.class_names)}"
        )
    gt = _require_gt(target_cache)
    feats = target_cache.backbone(model_backbone).data
    pred = predict(model, feats, text.backbone(model_backbone).data, mode)
    return top1_accuracy(
        pred, gt, target_cache.num_classes, mode=f"cross-cache/{mode}",
        config={"target": target_cache.dataset_name, "backbone": model_backbone},
    )
