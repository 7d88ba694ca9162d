"""Zero-shot scoring and top-K confident sample selection.

Every unlabeled sample is scored against the class-text embeddings
(cosine similarity, temperature softmax, argmax pseudo-label) and each
class keeps its K most confident argmax members.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from protoadapt.cache import NORM_TOL, EmbeddingCache, TextClassifier

DEFAULT_TAU = 0.01
DEFAULT_K = 16


@dataclass
class ScoreTable:
    """Cosine similarities and softmax probabilities for N samples x C classes."""

    similarities: np.ndarray
    probabilities: np.ndarray
    temperature: float


@dataclass
class PseudoLabelSet:
    """Per-class selected sample indices, confidence-descending."""

    k: int
    per_class: dict[int, list[tuple[int, float]]]
    labeling_backbone: str
    tau: float = DEFAULT_TAU
    rank_by: str = "probability"  # or "similarity"

    def selected(self) -> tuple[np.ndarray, np.ndarray]:
        """All selected (sample_indices, pseudo_labels), class-major order."""
        idx, lab = [], []
        for c in sorted(self.per_class):
            for sample, _ in self.per_class[c]:
                idx.append(sample)
                lab.append(c)
        return np.asarray(idx, dtype=np.int64), np.asarray(lab, dtype=np.int64)

    def counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in self.per_class.items()}


def _check_unit_rows(m: np.ndarray, name: str) -> None:
    norms = np.linalg.norm(m, axis=1)
    if m.shape[0] and np.abs(norms - 1.0).max() > NORM_TOL:
        bad = int(np.abs(norms - 1.0).argmax())
        raise ValueError(
            f"{name} must be unit-norm; row {bad} has norm {norms[bad]:.6g}"
        )


def similarity_matrix(image_features: np.ndarray, text_features: np.ndarray) -> np.ndarray:
    """Cosine similarities, N x C. Inputs must already be unit-norm."""
    v = np.atleast_2d(np.asarray(image_features, dtype=np.float64))
    t = np.atleast_2d(np.asarray(text_features, dtype=np.float64))
    if v.shape[1] != t.shape[1]:
        raise ValueError(
            f"dimension mismatch: image features d={v.shape[1]}, text d={t.shape[1]}"
        )
    _check_unit_rows(v, "image features")
    _check_unit_rows(t, "text features")
    return v @ t.T


def softmax_probs(similarities: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Row-wise temperature softmax with max-subtraction for overflow safety."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    s = np.asarray(similarities, dtype=np.float64) / tau
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def argmax_labels(probabilities: np.ndarray) -> np.ndarray:
    """Per-row predicted class; ties go to the lowest index."""
    return np.asarray(probabilities).argmax(axis=1)


def score_cache(
    cache: EmbeddingCache,
    classifier: TextClassifier,
    backbone_id: str,
    tau: float = DEFAULT_TAU,
) -> ScoreTable:
    """Score every cache sample against the text classifier on one backbone."""
    sims = similarity_matrix(
        cache.backbone(backbone_id).data, classifier.backbone(backbone_id).data
    )
    return ScoreTable(sims, softmax_probs(sims, tau), tau)


def select_top_k(
    scores: ScoreTable,
    k: int = DEFAULT_K,
    labeling_backbone: str = "",
    rank_by: str = "probability",
) -> PseudoLabelSet:
    """Keep, per class, the k most confident samples whose argmax is that class.

    Confidence is the softmax probability by default; rank_by="similarity"
    ranks by raw cosine similarity instead. Ties break toward the lower
    sample index. Classes with fewer than k argmax members keep them all.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if rank_by not in ("probability", "similarity"):
        raise ValueError(f"unknown rank_by {rank_by!r}")
    conf_table = (
        scores.probabilities if rank_by == "probability" else scores.similarities
    )
    labels = argmax_labels(scores.probabilities)
    n, c = conf_table.shape
    per_class: dict[int, list[tuple[int, float]]] = {cls: [] for cls in range(c)}
    for cls in range(c):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            continue
        conf = conf_table[members, cls]
        # sort by confidence descending, then sample index ascending
        order = np.lexsort((members, -conf))[:k]
        per_class[cls] = [(int(members[i]), float(conf[i])) for i in order]
    return PseudoLabelSet(
        k=k,
        per_class=per_class,
        labeling_backbone=labeling_backbone,
        tau=scores.temperature,
        rank_by=rank_by,
    )


def save_pseudolabels(labels: PseudoLabelSet, path: str | Path) -> None:
    doc = {
        "k": labels.k,
        "labeling_backbone": labels.labeling_backbone,
        "tau": labels.tau,
        "rank_by": labels.rank_by,
        "per_class": {
            str(c): [
                {"sample": s, "confidence": conf} for s, conf in labels.per_class[c]
            ]
            for c in sorted(labels.per_class)
        },
    }
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_pseudolabels(path: str | Path) -> PseudoLabelSet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    per_class = {
        int(c): [(int(e["sample"]), float(e["confidence"])) for e in entries]
        for c, entries in doc["per_class"].items()
    }
    return PseudoLabelSet(
        k=int(doc["k"]),
        per_class=per_class,
        labeling_backbone=doc["labeling_backbone"],
        tau=float(doc["tau"]),
        rank_by=doc.get("rank_by", "probability"),
    )
