"""On-disk embedding cache and text classifier formats.

Directory layout:
  manifest.json   -- dataset name, class names, per-backbone feature file info
  <backbone>.f32  -- raw float32 little-endian, row-major, no header
  ids.txt         -- one sample id per line, LF terminated
  labels.i32      -- optional, int32 little-endian, -1 = unknown

Text classifiers use the same pattern with a classifier.json manifest
(adds prompt_templates and ensembled) and C x d feature payloads.

Storage is float32; everything is promoted to float64 after load.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NORM_TOL = 1e-4
UNKNOWN_LABEL = -1

MANIFEST_NAME = "manifest.json"
CLASSIFIER_MANIFEST_NAME = "classifier.json"


class CacheError(Exception):
    """Malformed, inconsistent, or unreadable cache/classifier data."""


def l2_normalize(m: np.ndarray) -> np.ndarray:
    """Scale each row of m to unit Euclidean norm.

    Raises CacheError naming the first zero-norm row, if any.
    """
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    zero = np.flatnonzero(norms.ravel() == 0.0)
    if zero.size:
        raise CacheError(f"cannot normalize zero-norm row {zero[0]}")
    return m / norms


@dataclass
class FeatureMatrix:
    """N x d feature block for one backbone."""

    data: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def violations(self, where: str = "features") -> list[str]:
        out = []
        if not np.isfinite(self.data).all():
            bad = np.argwhere(~np.isfinite(self.data))[0]
            out.append(f"{where}: non-finite entry at row {bad[0]}, col {bad[1]}")
        elif self.normalized and self.rows:
            norms = np.linalg.norm(self.data, axis=1)
            off = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
            if off.size:
                out.append(
                    f"{where}: row {off[0]} has norm {norms[off[0]]:.6g}, "
                    f"expected 1 within {NORM_TOL}"
                )
        return out


@dataclass
class EmbeddingCache:
    """A dataset as precomputed features: ids, per-backbone matrices, optional labels."""

    dataset_name: str
    sample_ids: list[str]
    features: dict[str, FeatureMatrix]
    class_names: list[str]
    gt_labels: np.ndarray | None = None  # int array, UNKNOWN_LABEL = no ground truth

    def __post_init__(self):
        if self.gt_labels is not None:
            self.gt_labels = np.asarray(self.gt_labels, dtype=np.int64)

    @property
    def num_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def backbone(self, backbone_id: str) -> FeatureMatrix:
        try:
            return self.features[backbone_id]
        except KeyError:
            raise CacheError(
                f"backbone {backbone_id!r} not in cache "
                f"(has: {sorted(self.features)})"
            ) from None


@dataclass
class TextClassifier:
    """Per-class text embeddings plus prompt provenance."""

    class_names: list[str]
    features: dict[str, FeatureMatrix]
    prompt_templates: list[str] = field(default_factory=list)
    ensembled: bool = False

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def backbone(self, backbone_id: str) -> FeatureMatrix:
        try:
            return self.features[backbone_id]
        except KeyError:
            raise CacheError(
                f"backbone {backbone_id!r} not in classifier "
                f"(has: {sorted(self.features)})"
            ) from None


def validate(cache: EmbeddingCache) -> list[str]:
    """Return a report per violated invariant; empty list means valid."""
    out: list[str] = []
    n = cache.num_samples
    if len(set(cache.sample_ids)) != n:
        seen = set()
        for i, sid in enumerate(cache.sample_ids):
            if sid in seen:
                out.append(f"sample_ids: duplicate id {sid!r} at index {i}")
                break
            seen.add(sid)
    for bid, fm in cache.features.items():
        if fm.rows != n:
            out.append(
                f"features[{bid}]: {fm.rows} rows but {n} sample ids"
            )
        out.extend(fm.violations(where=f"features[{bid}]"))
    if cache.gt_labels is not None:
        if len(cache.gt_labels) != n:
            out.append(
                f"gt_labels: length {len(cache.gt_labels)} != num samples {n}"
            )
        else:
            c = cache.num_classes
            bad = np.flatnonzero(
                (cache.gt_labels != UNKNOWN_LABEL)
                & ((cache.gt_labels < 0) | (cache.gt_labels >= c))
            )
            if bad.size:
                out.append(
                    f"gt_labels: value {cache.gt_labels[bad[0]]} at index "
                    f"{bad[0]} outside [0, {c})"
                )
    return out


def validate_classifier(clf: TextClassifier) -> list[str]:
    out: list[str] = []
    c = clf.num_classes
    for bid, fm in clf.features.items():
        if fm.rows != c:
            out.append(f"features[{bid}]: {fm.rows} rows but {c} class names")
        out.extend(fm.violations(where=f"features[{bid}]"))
    return out


def _write_payload(path: Path, data: np.ndarray) -> int:
    raw = np.ascontiguousarray(data, dtype="<f4").tobytes()
    path.write_bytes(raw)
    return zlib.crc32(raw)


def _read_payload(path: Path, rows: int, dims: int, crc32: int | None) -> np.ndarray:
    if not path.is_file():
        raise CacheError(f"missing feature file {path}")
    raw = path.read_bytes()
    if len(raw) != rows * dims * 4:
        raise CacheError(
            f"payload size mismatch in {path.name}: manifest says "
            f"{rows}x{dims} float32 ({rows * dims * 4} bytes), file has {len(raw)}"
        )
    if crc32 is not None and zlib.crc32(raw) != crc32:
        raise CacheError(f"checksum mismatch for {path.name}")
    return np.frombuffer(raw, dtype="<f4").reshape(rows, dims).astype(np.float64)


def save_cache(cache: EmbeddingCache, path: str | Path) -> None:
    """Write the cache directory; refuses invalid caches before touching disk."""
    problems = validate(cache)
    if problems:
        raise CacheError("refusing to save invalid cache: " + "; ".join(problems))
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    backbones = {}
    for bid in sorted(cache.features):
        fm = cache.features[bid]
        fname = f"{bid}.f32"
        crc = _write_payload(path / fname, fm.data)
        backbones[bid] = {
            "dims": fm.dims,
            "file": fname,
            "crc32": crc,
            "normalized": fm.normalized,
        }
    (path / "ids.txt").write_text(
        "".join(sid + "\n" for sid in cache.sample_ids), encoding="utf-8"
    )
    labels_file = None
    if cache.gt_labels is not None:
        labels_file = "labels.i32"
        (path / labels_file).write_bytes(
            np.ascontiguousarray(cache.gt_labels, dtype="<i4").tobytes()
        )
    manifest = {
        "version": 1,
        "dataset": cache.dataset_name,
        "num_samples": cache.num_samples,
        "class_names": cache.class_names,
        "backbones": backbones,
        "ids_file": "ids.txt",
        "labels_file": labels_file,
    }
    (path / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_cache(path: str | Path) -> EmbeddingCache:
    """Read a cache directory back; checks shapes, duplicates, and checksums."""
    path = Path(path)
    mpath = path / MANIFEST_NAME
    if not mpath.is_file():
        raise CacheError(f"missing manifest {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    n = manifest["num_samples"]

    ids_path = path / manifest["ids_file"]
    if not ids_path.is_file():
        raise CacheError(f"missing ids file {ids_path}")
    sample_ids = ids_path.read_text(encoding="utf-8").splitlines()
    if len(sample_ids) != n:
        raise CacheError(
            f"ids file has {len(sample_ids)} lines, manifest says {n}"
        )

    features = {}
    for bid, info in manifest["backbones"].items():
        data = _read_payload(path / info["file"], n, info["dims"], info.get("crc32"))
        features[bid] = FeatureMatrix(data, normalized=info["normalized"])

    gt_labels = None
    if manifest.get("labels_file"):
        lpath = path / manifest["labels_file"]
        if not lpath.is_file():
            raise CacheError(f"missing labels file {lpath}")
        raw = lpath.read_bytes()
        if len(raw) != n * 4:
            raise CacheError(
                f"labels file size mismatch: expected {n} int32, got {len(raw)} bytes"
            )
        gt_labels = np.frombuffer(raw, dtype="<i4").astype(np.int64)

    cache = EmbeddingCache(
        dataset_name=manifest["dataset"],
        sample_ids=sample_ids,
        features=features,
        class_names=manifest["class_names"],
        gt_labels=gt_labels,
    )
    problems = validate(cache)
    if problems:
        raise CacheError("loaded cache is invalid: " + "; ".join(problems))
    return cache


def save_classifier(clf: TextClassifier, path: str | Path) -> None:
    problems = validate_classifier(clf)
    if problems:
        raise CacheError(
            "refusing to save invalid classifier: " + "; ".join(problems)
        )
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    backbones = {}
    for bid in sorted(clf.features):
        fm = clf.features[bid]
        fname = f"{bid}.f32"
        crc = _write_payload(path / fname, fm.data)
        backbones[bid] = {
            "dims": fm.dims,
            "file": fname,
            "crc32": crc,
            "normalized": fm.normalized,
        }
    manifest = {
        "version": 1,
        "class_names": clf.class_names,
        "backbones": backbones,
        "prompt_templates": clf.prompt_templates,
        "ensembled": clf.ensembled,
    }
    (path / CLASSIFIER_MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_classifier(path: str | Path) -> TextClassifier:
    path = Path(path)
    mpath = path / CLASSIFIER_MANIFEST_NAME
    if not mpath.is_file():
        raise CacheError(f"missing classifier manifest {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    c = len(manifest["class_names"])
    features = {}
    for bid, info in manifest["backbones"].items():
        data = _read_payload(path / info["file"], c, info["dims"], info.get("crc32"))
        features[bid] = FeatureMatrix(data, normalized=info["normalized"])
    clf = TextClassifier(
        class_names=manifest["class_names"],
        features=features,
        prompt_templates=manifest.get("prompt_templates", []),
        ensembled=manifest.get("ensembled", False),
    )
    problems = validate_classifier(clf)
    if problems:
        raise CacheError("loaded classifier is invalid: " + "; ".join(problems))
    return clf
