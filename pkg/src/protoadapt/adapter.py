"""Residual prototype adapter: affinity scoring, fusion, and training.

The adapter is a single C x d weight matrix W scored against unit-norm
features through a sharpened exponential affinity exp(-eta * (1 - W v)),
scaled by the residual ratio beta and added to the frozen zero-shot
logits v f_t^T. W starts from the prototype bank (or random rows for the
ablation) and is the only trainable quantity; it is fit with softmax
cross-entropy on the pseudo-labeled selection.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from protoadapt.cache import CacheError, EmbeddingCache, TextClassifier, l2_normalize
from protoadapt.prototype import PrototypeBank
from protoadapt.pseudolabel import PseudoLabelSet

DEFAULT_ETA = 5.5
DEFAULT_BETA = 1.0

ADAPTER_MANIFEST_NAME = "adapter.json"
HISTORY_NAME = "history.csv"

# named sub-streams hanging off the user seed
STREAM_INIT = 1
STREAM_SHUFFLE = 2

MODES = ("fused", "adapter_only", "clip_only")


@dataclass
class AdapterModel:
    W: np.ndarray  # C x d
    eta: float = DEFAULT_ETA
    beta: float = DEFAULT_BETA
    init_mode: str = "prototype"
    trained_epochs: int = 0

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        if not np.isfinite(self.W).all():
            raise ValueError("adapter weights contain NaN or infinity")

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dims(self) -> int:
        return self.W.shape[1]


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_schedule: str = "cosine"  # or "constant"
    optimizer: str = "adaptive-moment"  # or "plain-gradient-descent"
    seed: int = 0
    shuffle: bool = True

    def check(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.optimizer not in ("plain-gradient-descent", "adaptive-moment"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)  # loss, train_acc, lr

    def append(self, loss: float, train_acc: float, lr: float) -> None:
        self.epochs.append({"loss": loss, "train_acc": train_acc, "lr": lr})

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "train_acc", "lr"])
            for i, rec in enumerate(self.epochs, start=1):
                w.writerow([i, repr(rec["loss"]), repr(rec["train_acc"]), repr(rec["lr"])])


def affinity(v: np.ndarray, W: np.ndarray, eta: float) -> np.ndarray:
    """exp(-eta * (1 - v W^T)); in (0, 1] for unit-norm inputs."""
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    out = np.exp(-eta * (1.0 - np.atleast_2d(v) @ np.asarray(W, dtype=np.float64).T))
    return out[0] if single else out


def clip_logits(v: np.ndarray, text_features: np.ndarray) -> np.ndarray:
    """Zero-shot logits: plain dot products against the class-text rows."""
    v = np.asarray(v, dtype=np.float64)
    t = np.asarray(text_features, dtype=np.float64)
    single = v.ndim == 1
    v2 = np.atleast_2d(v)
    if v2.shape[1] != t.shape[1]:
        raise ValueError(
            f"dimension mismatch: features d={v2.shape[1]}, text d={t.shape[1]}"
        )
    out = v2 @ t.T
    return out[0] if single else out


def fused_logits(
    v: np.ndarray,
    model: AdapterModel,
    text_features: np.ndarray,
    mode: str = "fused",
) -> np.ndarray:
    if mode == "fused":
        return model.beta * affinity(v, model.W, model.eta) + clip_logits(
            v, text_features
        )
    if mode == "adapter_only":
        return model.beta * affinity(v, model.W, model.eta)
    if mode == "clip_only":
        return clip_logits(v, text_features)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def init_adapter(
    source: PrototypeBank | None = None,
    eta: float = DEFAULT_ETA,
    beta: float = DEFAULT_BETA,
    random_shape: tuple[int, int] | None = None,
    seed: int = 0,
) -> AdapterModel:
    """Build an untrained adapter from prototypes, or random unit rows.

    Random rows are drawn i.i.d. gaussian with std 1/sqrt(d), then
    renormalized to unit length, deterministically per seed.
    """
    if source is not None:
        return AdapterModel(
            W=source.prototypes.copy(), eta=eta, beta=beta, init_mode="prototype"
        )
    if random_shape is None:
        raise ValueError("either a prototype bank or random_shape is required")
    c, d = random_shape
    rng = np.random.default_rng(np.random.SeedSequence([seed, STREAM_INIT]))
    w = rng.standard_normal((c, d)) / math.sqrt(d)
    return AdapterModel(W=l2_normalize(w), eta=eta, beta=beta, init_mode="random")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log softmax probability of the labeled class."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    return float(-_log_softmax(logits)[np.arange(b), labels].mean())


def grad_W(
    model: AdapterModel,
    batch_features: np.ndarray,
    labels: np.ndarray,
    text_features: np.ndarray,
) -> np.ndarray:
    """Analytic gradient of mean cross-entropy on fused logits w.r.t. W.

    The text branch is frozen, so only the affinity path contributes:
    row c gets (1/B) sum_b (p_bc - y_bc) * beta * eta * A_bc * x_b.
    """
    x = np.atleast_2d(np.asarray(batch_features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[1] != model.dims:
        raise ValueError(
            f"feature dims {x.shape[1]} do not match adapter dims {model.dims}"
        )
    b = x.shape[0]
    a = np.exp(-model.eta * (1.0 - x @ model.W.T))  # B x C affinities
    logits = model.beta * a + x @ np.asarray(text_features, dtype=np.float64).T
    p = np.exp(_log_softmax(logits))
    p[np.arange(b), labels] -= 1.0
    coeff = p * (model.beta * model.eta * a) / b  # B x C
    return coeff.T @ x


def _lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def train(
    cache: EmbeddingCache,
    labels: PseudoLabelSet,
    bank: PrototypeBank,
    text: TextClassifier,
    model_backbone: str,
    cfg: TrainConfig,
    eta: float = DEFAULT_ETA,
    beta: float = DEFAULT_BETA,
    init_mode: str = "prototype",
) -> tuple[AdapterModel, TrainHistory]:
    """Fit W by mini-batch gradient descent on the pseudo-labeled selection.

    The training set is exactly the union of selected samples with their
    pseudo-labels; ground truth is never consulted. Fully deterministic
    given cfg.seed.
    """
    cfg.check()
    sel_idx, sel_labels = labels.selected()
    if sel_idx.size == 0:
        raise CacheError("training set is empty: no pseudo-labeled samples selected")
    feats = cache.backbone(model_backbone).data
    if sel_idx.max() >= feats.shape[0]:
        raise CacheError(
            f"selection references sample {sel_idx.max()} outside cache "
            f"of {feats.shape[0]}"
        )
    x_all = feats[sel_idx]
    y_all = sel_labels
    text_feats = text.backbone(model_backbone).data

    if init_mode == "prototype":
        model = init_adapter(bank, eta=eta, beta=beta)
    elif init_mode == "random":
        model = init_adapter(
            None,
            eta=eta,
            beta=beta,
            random_shape=(bank.num_classes, bank.dims),
            seed=cfg.seed,
        )
    else:
        raise ValueError(f"unknown init_mode {init_mode!r}")

    n = x_all.shape[0]
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, STREAM_SHUFFLE]))

    adam = cfg.optimizer == "adaptive-moment"
    m = np.zeros_like(model.W)
    v = np.zeros_like(model.W)
    b1, b2, eps = 0.9, 0.999, 1e-8
    t_adam = 0

    history = TrainHistory()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        epoch_lr = _lr_at(cfg, step, total_steps)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            logits = fused_logits(xb, model, text_feats)
            loss_sum += cross_entropy(logits, yb) * idx.size
            g = grad_W(model, xb, yb, text_feats)
            lr = _lr_at(cfg, step, total_steps)
            if adam:
                t_adam += 1
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                m_hat = m / (1 - b1**t_adam)
                v_hat = v / (1 - b2**t_adam)
                model.W = model.W - lr * m_hat / (np.sqrt(v_hat) + eps)
            else:
                model.W = model.W - lr * g
            step += 1
        pred = predict(model, x_all, text_feats)
        acc = float((pred == y_all).mean())
        history.append(loss_sum / n, acc, epoch_lr)
        model.trained_epochs = epoch + 1
    return model, history


def predict(
    model: AdapterModel,
    features: np.ndarray,
    text_features: np.ndarray,
    mode: str = "fused",
) -> np.ndarray:
    """Per-row argmax of the fused logits; ties go to the lowest class index."""
    logits = fused_logits(np.atleast_2d(features), model, text_features, mode)
    return logits.argmax(axis=1)


def save_adapter(model: AdapterModel, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    fname = "weights.f32"
    raw = np.ascontiguousarray(model.W, dtype="<f4").tobytes()
    (path / fname).write_bytes(raw)
    manifest = {
        "eta": model.eta,
        "beta": model.beta,
        "init_mode": model.init_mode,
        "trained_epochs": model.trained_epochs,
        "dims": model.dims,
        "classes": model.num_classes,
        "weights_file": fname,
        "crc32": zlib.crc32(raw),
    }
    (path / ADAPTER_MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_adapter(path: str | Path) -> AdapterModel:
    path = Path(path)
    mpath = path / ADAPTER_MANIFEST_NAME
    if not mpath.is_file():
        raise CacheError(f"missing adapter manifest {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    fpath = path / manifest["weights_file"]
    raw = fpath.read_bytes()
    c, d = manifest["classes"], manifest["dims"]
    if len(raw) != c * d * 4:
        raise CacheError(f"payload size mismatch in {fpath.name}")
    if zlib.crc32(raw) != manifest["crc32"]:
        raise CacheError(f"checksum mismatch for {fpath.name}")
    w = np.frombuffer(raw, dtype="<f4").reshape(c, d).astype(np.float64)
    return AdapterModel(
        W=w,
        eta=manifest["eta"],
        beta=manifest["beta"],
        init_mode=manifest["init_mode"],
        trained_epochs=manifest["trained_epochs"],
    )
