"""Building-damage change detection with segmenter-guided adaptation.

The workflow has three stages. A :class:`~davi.estimators.SourceChangeDetector`
is trained on labeled pre/post pairs. For an unlabeled target domain,
:func:`~davi.pseudo.generate_pseudo_labels` fuses the frozen source model's
predictions with a promptable segmenter's per-image confidence differences
into binary pseudo labels. :class:`~davi.estimators.DaviAdapter` then adapts a
copy of the source network by minimizing cross-entropy against those labels
(refined each step for consistency across augmented views) plus a weighted
prediction-entropy term.
"""

from .errors import (
    AdaptationDivergedError,
    DegenerateReferenceError,
    MissingArtifactError,
    SegmenterBackendError,
    ValidationError,
)
from .estimators import (
    DaviAdapter,
    SourceChangeDetector,
    clone_for_target,
    load_detector,
    prediction_entropy_loss,
    pseudo_cross_entropy_loss,
)
from .maps import (
    LOG_EPS,
    LOSS_VARIANTS,
    binarize,
    clipped_confidence_diff,
    coarse_label,
    combine_max,
    consistency_update,
    mask_fine,
    mean_std,
    prediction_entropy,
    pseudo_cross_entropy,
)
from .metrics import ConfusionCounts, confusion, evaluate_pairs, evaluate_run, summarize
from .pseudo import (
    PairPseudoLabels,
    PseudoLabelSet,
    generate_pseudo_labels,
    load_label_store,
    refine_pseudo_label,
    save_label_store,
    store_digest,
)
from .segmenters import (
    DEFAULT_PROMPT,
    CachedSegmenter,
    ExternalSegmenter,
    OracleIndex,
    OracleSegmenter,
    Segmenter,
    SegmenterRequest,
)
from .threshold import ThresholdSearchResult, default_grid, search_tau

__version__ = "0.1.0"

__all__ = [
    "AdaptationDivergedError",
    "CachedSegmenter",
    "ConfusionCounts",
    "DEFAULT_PROMPT",
    "DaviAdapter",
    "DegenerateReferenceError",
    "ExternalSegmenter",
    "LOG_EPS",
    "LOSS_VARIANTS",
    "MissingArtifactError",
    "OracleIndex",
    "OracleSegmenter",
    "PairPseudoLabels",
    "PseudoLabelSet",
    "Segmenter",
    "SegmenterBackendError",
    "SegmenterRequest",
    "SourceChangeDetector",
    "ThresholdSearchResult",
    "ValidationError",
    "__version__",
    "binarize",
    "clipped_confidence_diff",
    "clone_for_target",
    "coarse_label",
    "combine_max",
    "confusion",
    "consistency_update",
    "default_grid",
    "evaluate_pairs",
    "evaluate_run",
    "generate_pseudo_labels",
    "load_detector",
    "load_label_store",
    "mask_fine",
    "mean_std",
    "prediction_entropy",
    "prediction_entropy_loss",
    "pseudo_cross_entropy",
    "pseudo_cross_entropy_loss",
    "refine_pseudo_label",
    "save_label_store",
    "search_tau",
    "store_digest",
    "summarize",
]
