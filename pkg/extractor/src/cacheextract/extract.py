"""Feature extraction from image folders with a contrastive checkpoint.

Datasets use the folder-per-class layout: <dataset>/<class_name>/<image>.
Sample ids are sorted relative paths, so ordering is a pure function of
dataset content and shared across backbones. No augmentation is applied,
making reruns bit-identical.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from cacheextract import cachefmt
from cacheextract.templates import DEFAULT_TEMPLATES, readable

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp"}


@dataclass
class ExtractionJob:
    dataset: Path
    backbones: dict[str, Path]  # backbone_id -> checkpoint directory
    output: Path
    classifier_output: Path | None = None
    templates: list[str] = field(default_factory=lambda: list(DEFAULT_TEMPLATES))
    write_labels: bool = False
    batch_size: int = 32
    device: str = "cpu"

    def check(self) -> None:
        if not self.backbones:
            raise ValueError("at least one backbone is required")
        if not self.templates:
            raise ValueError("template set must not be empty")
        if not Path(self.dataset).is_dir():
            raise FileNotFoundError(f"dataset directory not found: {self.dataset}")


class Encoder:
    """A loaded checkpoint: paired image and text encoders plus preprocessing."""

    def __init__(self, checkpoint: str | Path, device: str = "cpu"):
        from transformers import CLIPModel, CLIPProcessor

        self.model = CLIPModel.from_pretrained(str(checkpoint)).eval().to(device)
        self.processor = CLIPProcessor.from_pretrained(str(checkpoint))
        self.device = device

    @torch.no_grad()
    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        inputs = self.processor(images=images, return_tensors="pt").to(self.device)
        pooled = self.model.vision_model(**inputs).pooler_output
        emb = self.model.visual_projection(pooled)
        return emb.cpu().double().numpy()

    @torch.no_grad()
    def encode_texts(self, texts: list[str]) -> np.ndarray:
        inputs = self.processor(
            text=texts, return_tensors="pt", padding=True, truncation=True
        ).to(self.device)
        pooled = self.model.text_model(**inputs).pooler_output
        emb = self.model.text_projection(pooled)
        return emb.cpu().double().numpy()


def unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("encoder produced a zero feature vector")
    return m / norms


def scan_dataset(root: str | Path) -> tuple[list[str], list[str], list[int]]:
    """Return (class_names, sample_ids, labels) in sorted, deterministic order."""
    root = Path(root)
    class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not class_names:
        raise ValueError(f"no class subdirectories under {root}")
    ids, labels = [], []
    for label, cls in enumerate(class_names):
        for f in sorted((root / cls).iterdir()):
            if f.is_file() and f.suffix.lower() in IMAGE_EXTENSIONS:
                ids.append(f"{cls}/{f.name}")
                labels.append(label)
    order = np.argsort(np.asarray(ids, dtype=object), kind="stable")
    ids = [ids[i] for i in order]
    labels = [labels[i] for i in order]
    return class_names, ids, labels


def _load_images(root: Path, ids: list[str]) -> tuple[list[str], list[Image.Image]]:
    """Open all images, skipping unreadable ones with a warning."""
    kept_ids, images = [], []
    for sid in ids:
        try:
            with Image.open(root / sid) as img:
                images.append(img.convert("RGB"))
            kept_ids.append(sid)
        except Exception as e:  # unreadable images are excluded everywhere
            warnings.warn(f"skipping unreadable image {sid}: {e}")
    return kept_ids, images


def extract_image_features(job: ExtractionJob) -> Path:
    """Write a multi-backbone cache directory for the job's dataset."""
    job.check()
    root = Path(job.dataset)
    class_names, all_ids, all_labels = scan_dataset(root)
    # decode once so a broken file is excluded consistently for every backbone
    ids, images = _load_images(root, all_ids)
    if not ids:
        raise ValueError(f"no readable images under {root}")
    label_of = dict(zip(all_ids, all_labels))
    labels = np.asarray([label_of[sid] for sid in ids], dtype=np.int64)

    features = {}
    for bid, ckpt in job.backbones.items():
        enc = Encoder(ckpt, job.device)
        chunks = []
        for start in range(0, len(images), job.batch_size):
            chunks.append(enc.encode_images(images[start : start + job.batch_size]))
        features[bid] = unit_rows(np.vstack(chunks)).astype(np.float32)
        log.info("encoded %d images with %s (d=%d)", len(ids), bid,
                 features[bid].shape[1])

    cachefmt.write_cache(
        job.output,
        dataset_name=root.name,
        sample_ids=ids,
        features=features,
        class_names=class_names,
        gt_labels=labels if job.write_labels else None,
    )
    return Path(job.output)


def build_text_classifier(job: ExtractionJob, class_names: list[str]) -> Path:
    """Write a prompt-ensembled text classifier for the given class list.

    Each template-instantiated prompt is encoded and unit-normalized,
    the per-class mean is taken across templates, and the mean is
    re-normalized.
    """
    if not class_names:
        raise ValueError("class list must not be empty")
    if job.classifier_output is None:
        raise ValueError("classifier output path not set")
    features = {}
    for bid, ckpt in job.backbones.items():
        enc = Encoder(ckpt, job.device)
        rows = []
        for cls in class_names:
            prompts = [t.format(readable(cls)) for t in job.templates]
            emb = unit_rows(enc.encode_texts(prompts))
            rows.append(unit_rows(emb.mean(axis=0)))
        features[bid] = np.vstack(rows).astype(np.float32)
    cachefmt.write_classifier(
        job.classifier_output, class_names, features, job.templates
    )
    return Path(job.classifier_output)
