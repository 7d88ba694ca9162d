import numpy as np
import pytest
from PIL import Image

from cacheextract.toyckpt import build_toy_checkpoint


@pytest.fixture(scope="session")
def checkpoints(tmp_path_factory):
    """Two tiny checkpoints standing in for the labeling/model backbones."""
    root = tmp_path_factory.mktemp("ckpts")
    return {
        "vitb16": build_toy_checkpoint(root / "vitb16", embed_dim=16, seed=0),
        "rn50": build_toy_checkpoint(root / "rn50", embed_dim=12, seed=1),
    }


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """12 random images in 3 class folders."""
    root = tmp_path_factory.mktemp("data") / "toyset"
    rng = np.random.default_rng(7)
    for cls in ("cat", "dog", "fox"):
        d = root / cls
        d.mkdir(parents=True)
        for i in range(4):
            arr = rng.integers(0, 255, size=(48, 40, 3), dtype=np.uint8)
            Image.fromarray(arr).save(d / f"img_{i:02d}.png")
    return root
