"""Class prototype estimation from pseudo-labeled selections.

A prototype is the mean of the selected samples' unit-norm features,
re-normalized to unit length so downstream cosine scoring stays exact.
Selection indices may come from a different backbone than the features
being averaged; only the indices cross over, never the feature spaces.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from protoadapt.cache import CacheError, EmbeddingCache, l2_normalize
from protoadapt.pseudolabel import PseudoLabelSet

PROTOTYPE_MANIFEST_NAME = "prototypes.json"


@dataclass
class PrototypeBank:
    """C x d unit-norm class prototypes plus provenance."""

    prototypes: np.ndarray
    source_backbone: str
    k_used: list[int]

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dims(self) -> int:
        return self.prototypes.shape[1]


def estimate_prototypes(
    cache: EmbeddingCache,
    labels: PseudoLabelSet,
    model_backbone: str,
    text_fallback: np.ndarray | None = None,
) -> PrototypeBank:
    """Average each class's selected features, then re-normalize.

    Classes with no selected samples raise unless text_fallback (C x d, the
    class-text features in the model backbone's space) is supplied, in which
    case the text row stands in for the missing prototype.
    """
    feats = cache.backbone(model_backbone).data
    n, d = feats.shape
    c = cache.num_classes
    protos = np.zeros((c, d))
    k_used = []
    for cls in range(c):
        entries = labels.per_class.get(cls, [])
        idx = np.array([s for s, _ in entries], dtype=np.int64)
        if idx.size and idx.max() >= n:
            raise CacheError(
                f"class {cls} selects sample {idx.max()} but cache has {n} samples"
            )
        if idx.size == 0:
            if text_fallback is None:
                raise CacheError(
                    f"class {cls} has no selected samples and no fallback enabled"
                )
            protos[cls] = text_fallback[cls]
            k_used.append(0)
            continue
        protos[cls] = feats[idx].mean(axis=0)
        k_used.append(idx.size)
    return PrototypeBank(
        prototypes=l2_normalize(protos),
        source_backbone=model_backbone,
        k_used=k_used,
    )


def save_prototypes(bank: PrototypeBank, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    fname = "prototypes.f32"
    raw = np.ascontiguousarray(bank.prototypes, dtype="<f4").tobytes()
    (path / fname).write_bytes(raw)
    manifest = {
        "version": 1,
        "classes": bank.num_classes,
        "dims": bank.dims,
        "file": fname,
        "crc32": zlib.crc32(raw),
        "source_backbone": bank.source_backbone,
        "k_used": bank.k_used,
        "normalized": True,
    }
    (path / PROTOTYPE_MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_prototypes(path: str | Path) -> PrototypeBank:
    path = Path(path)
    mpath = path / PROTOTYPE_MANIFEST_NAME
    if not mpath.is_file():
        raise CacheError(f"missing prototype manifest {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    fpath = path / manifest["file"]
    raw = fpath.read_bytes()
    c, d = manifest["classes"], manifest["dims"]
    if len(raw) != c * d * 4:
        raise CacheError(
            f"payload size mismatch in {fpath.name}: expected {c}x{d} float32"
        )
    if zlib.crc32(raw) != manifest["crc32"]:
        raise CacheError(f"checksum mismatch for {fpath.name}")
    protos = np.frombuffer(raw, dtype="<f4").reshape(c, d).astype(np.float64)
    return PrototypeBank(
        prototypes=protos,
        source_backbone=manifest["source_backbone"],
        k_used=list(manifest["k_used"]),
    )
