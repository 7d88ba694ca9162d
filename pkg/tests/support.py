"""Shared builders for small randomized caches and classifiers."""

import numpy as np

from protoadapt.cache import EmbeddingCache, FeatureMatrix, TextClassifier, l2_normalize


def random_unit(rng, n, d):
    return l2_normalize(rng.standard_normal((n, d)))


def f32(m):
    """Round to float32-representable values so save/load is bitwise."""
    return np.asarray(m, dtype=np.float32).astype(np.float64)


def make_cache(rng, n=10, d=8, c=3, backbones=("vitb16",), with_gt=True, name="toy"):
    features = {b: FeatureMatrix(f32(random_unit(rng, n, d))) for b in backbones}
    gt = rng.integers(0, c, size=n) if with_gt else None
    return EmbeddingCache(
        dataset_name=name,
        sample_ids=[f"s{i:04d}" for i in range(n)],
        features=features,
        class_names=[f"cls{j}" for j in range(c)],
        gt_labels=gt,
    )


def make_classifier(rng, c=3, d=8, backbones=("vitb16",)):
    return TextClassifier(
        class_names=[f"cls{j}" for j in range(c)],
        features={b: FeatureMatrix(f32(random_unit(rng, c, d))) for b in backbones},
        prompt_templates=["a photo of a {}."],
        ensembled=False,
    )
