"""Adapt a frozen vision-language classifier to an unlabeled dataset in embedding space.

Pipeline: zero-shot pseudo-labeling, top-K confident selection per class,
class prototype estimation, and a residually fused single-layer adapter
trained on the selected samples.
"""

from protoadapt.cache import (
    EmbeddingCache,
    FeatureMatrix,
    TextClassifier,
    l2_normalize,
    load_cache,
    load_classifier,
    save_cache,
    save_classifier,
    validate,
)
from protoadapt.pseudolabel import (
    PseudoLabelSet,
    ScoreTable,
    argmax_labels,
    score_cache,
    select_top_k,
    similarity_matrix,
    softmax_probs,
)
from protoadapt.prototype import PrototypeBank, estimate_prototypes
from protoadapt.adapter import (
    AdapterModel,
    TrainConfig,
    TrainHistory,
    affinity,
    clip_logits,
    cross_entropy,
    fused_logits,
    grad_W,
    init_adapter,
    predict,
    train,
)
from protoadapt.evaluation import (
    EvalReport,
    SyntheticSpec,
    eval_cross_cache,
    generate_synthetic,
    pseudo_label_precision,
    run_ablation,
    run_k_sweep,
    top1_accuracy,
)

__version__ = "0.1.0"
