"""Writers for the embedding-cache and text-classifier directory formats.

The layout is the published interchange format consumed by the adaptation
pipeline: manifest.json + raw float32 little-endian feature payloads +
ids.txt + optional int32 labels, with CRC-32 checksums in the manifest.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

UNKNOWN_LABEL = -1


def _write_payload(path: Path, data: np.ndarray) -> int:
    raw = np.ascontiguousarray(data, dtype="<f4").tobytes()
    path.write_bytes(raw)
    return zlib.crc32(raw)


def write_cache(
    path: str | Path,
    dataset_name: str,
    sample_ids: list[str],
    features: dict[str, np.ndarray],
    class_names: list[str],
    gt_labels: np.ndarray | None = None,
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    backbones = {}
    for bid in sorted(features):
        data = np.atleast_2d(features[bid])
        if data.shape[0] != len(sample_ids):
            raise ValueError(
                f"backbone {bid}: {data.shape[0]} rows but {len(sample_ids)} ids"
            )
        fname = f"{bid}.f32"
        backbones[bid] = {
            "dims": int(data.shape[1]),
            "file": fname,
            "crc32": _write_payload(path / fname, data),
            "normalized": True,
        }
    (path / "ids.txt").write_text(
        "".join(sid + "\n" for sid in sample_ids), encoding="utf-8"
    )
    labels_file = None
    if gt_labels is not None:
        labels_file = "labels.i32"
        (path / labels_file).write_bytes(
            np.ascontiguousarray(gt_labels, dtype="<i4").tobytes()
        )
    manifest = {
        "version": 1,
        "dataset": dataset_name,
        "num_samples": len(sample_ids),
        "class_names": class_names,
        "backbones": backbones,
        "ids_file": "ids.txt",
        "labels_file": labels_file,
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_classifier(
    path: str | Path,
    class_names: list[str],
    features: dict[str, np.ndarray],
    prompt_templates: list[str],
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    backbones = {}
    for bid in sorted(features):
        data = np.atleast_2d(features[bid])
        if data.shape[0] != len(class_names):
            raise ValueError(
                f"backbone {bid}: {data.shape[0]} rows but {len(class_names)} classes"
            )
        fname = f"{bid}.f32"
        backbones[bid] = {
            "dims": int(data.shape[1]),
            "file": fname,
            "crc32": _write_payload(path / fname, data),
            "normalized": True,
        }
    manifest = {
        "version": 1,
        "class_names": class_names,
        "backbones": backbones,
        "prompt_templates": prompt_templates,
        "ensembled": len(prompt_templates) > 1,
    }
    (path / "classifier.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
