import numpy as np
import pytest

from protoadapt.cache import CacheError, l2_normalize
from protoadapt.prototype import (
    PrototypeBank,
    estimate_prototypes,
    load_prototypes,
    save_prototypes,
)
from protoadapt.pseudolabel import PseudoLabelSet
from support import f32, make_cache, random_unit


def labelset(per_class, k=16, backbone="vitb16"):
    return PseudoLabelSet(
        k=k,
        per_class={c: [(s, 1.0) for s in idx] for c, idx in per_class.items()},
        labeling_backbone=backbone,
    )


def oracle_prototypes(feats, per_class, c):
    """Independent mean-then-renormalize recomputation."""
    out = np.zeros((c, feats.shape[1]))
    for cls in range(c):
        sel = np.array(per_class[cls])
        m = feats[sel].mean(axis=0)
        out[cls] = m / np.linalg.norm(m)
    return out


class TestEstimatePrototypes:
    def test_single_sample_is_identity(self):
        rng = np.random.default_rng(0)
        cache = make_cache(rng, n=4, d=6, c=2)
        labels = labelset({0: [2], 1: [0]})
        bank = estimate_prototypes(cache, labels, "vitb16")
        np.testing.assert_allclose(
            bank.prototypes[0], cache.features["vitb16"].data[2], atol=1e-12
        )
        assert bank.k_used == [1, 1]

    def test_two_axis_vectors(self):
        cache = make_cache(np.random.default_rng(1), n=2, d=2, c=1)
        cache.features["vitb16"].data = np.array([[1.0, 0.0], [0.0, 1.0]])
        bank = estimate_prototypes(cache, labelset({0: [0, 1]}), "vitb16")
        np.testing.assert_allclose(bank.prototypes[0], [0.70711, 0.70711], atol=1e-5)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            c, d, per = 4, 16, 16
            cache = make_cache(rng, n=c * per, d=d, c=c)
            per_class = {
                cls: rng.permutation(c * per)[:per].tolist() for cls in range(c)
            }
            bank = estimate_prototypes(cache, labelset(per_class), "vitb16")
            expected = oracle_prototypes(
                cache.features["vitb16"].data, per_class, c
            )
            np.testing.assert_allclose(bank.prototypes, expected, atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        cache = make_cache(rng, n=20, d=8, c=2)
        sel = [3, 7, 11, 15]
        a = estimate_prototypes(cache, labelset({0: sel, 1: [0]}), "vitb16")
        b = estimate_prototypes(cache, labelset({0: sel[::-1], 1: [0]}), "vitb16")
        np.testing.assert_array_equal(a.prototypes, b.prototypes)

    def test_unit_rows(self):
        rng = np.random.default_rng(4)
        cache = make_cache(rng, n=30, d=12, c=3)
        labels = labelset({0: [0, 1, 2], 1: [3, 4], 2: [5]})
        bank = estimate_prototypes(cache, labels, "vitb16")
        np.testing.assert_allclose(
            np.linalg.norm(bank.prototypes, axis=1), 1.0, atol=1e-6
        )

    def test_cross_backbone_uses_model_features(self):
        rng = np.random.default_rng(5)
        cache = make_cache(rng, n=10, d=8, c=2, backbones=("vitb16", "rn50"))
        labels = labelset({0: [1, 4], 1: [7]}, backbone="vitb16")
        bank = estimate_prototypes(cache, labels, "rn50")
        feats = cache.features["rn50"].data
        expected = l2_normalize(feats[[1, 4]].mean(axis=0, keepdims=True))[0]
        np.testing.assert_allclose(bank.prototypes[0], expected, atol=1e-12)
        assert bank.source_backbone == "rn50"

    def test_empty_class_errors_without_fallback(self):
        cache = make_cache(np.random.default_rng(6), n=5, d=4, c=2)
        with pytest.raises(CacheError, match="class 1 has no selected samples"):
            estimate_prototypes(cache, labelset({0: [0], 1: []}), "vitb16")

    def test_empty_class_text_fallback(self):
        rng = np.random.default_rng(7)
        cache = make_cache(rng, n=5, d=4, c=2)
        text = random_unit(rng, 2, 4)
        bank = estimate_prototypes(
            cache, labelset({0: [0], 1: []}), "vitb16", text_fallback=text
        )
        np.testing.assert_allclose(bank.prototypes[1], text[1], atol=1e-12)
        assert bank.k_used == [1, 0]

    def test_out_of_range_index(self):
        cache = make_cache(np.random.default_rng(8), n=5, d=4, c=2)
        with pytest.raises(CacheError, match="sample 99"):
            estimate_prototypes(cache, labelset({0: [99], 1: [0]}), "vitb16")

    def test_unknown_backbone(self):
        cache = make_cache(np.random.default_rng(9))
        with pytest.raises(CacheError, match="backbone"):
            estimate_prototypes(cache, labelset({0: [0]}), "missing")


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        bank = PrototypeBank(
            prototypes=f32(random_unit(rng, 5, 8)),
            source_backbone="rn50",
            k_used=[16, 16, 3, 16, 1],
        )
        save_prototypes(bank, tmp_path / "p")
        back = load_prototypes(tmp_path / "p")
        np.testing.assert_array_equal(back.prototypes, bank.prototypes)
        assert back.source_backbone == "rn50"
        assert back.k_used == bank.k_used
