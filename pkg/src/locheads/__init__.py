"""Training-free visual grounding via localization heads.

Discovers the small set of attention heads in a vision-language model
that localize referred objects, using two signals computed from
serialized text-to-image attention maps: total attention mass on the
image and spatial entropy of the binarized map. The selected heads
ground referring expressions as bounding boxes and pseudo-masks with no
training.

Typical use::

    from locheads import LocalizationHeadGrounder, io

    dumps = list(io.iter_corpus(manifest_path))
    model = LocalizationHeadGrounder(top_k=3).fit(dumps)
    boxes = model.predict(dumps)

The same pipeline is exposed as functions (mean_attention_sums,
max_curvature_threshold, selection_frequency, ground_sample, ...) and as
the `locheads` command-line tool.
"""
from . import entropy, fixtures, grounding, io, metrics, selection, stats, types
from .entropy import (
    MAX_ENTROPY,
    binarize_at_mean,
    connected_components,
    entropy_batch,
    spatial_entropy,
)
from .estimator import LocalizationHeadGrounder
from .fixtures import FixtureSpec, generate_corpus
from .grounding import GroundingConfig, GroundingResult, gaussian_smooth, ground_sample
from .metrics import (
    EvalSummary,
    box_iou,
    downsample_mask,
    evaluate_rec,
    evaluate_res,
    mask_iou,
    spearman,
    upscale_mask,
)
from .selection import (
    SelectionConfig,
    rank_iou_correlation,
    selection_frequency,
)
from .stats import (
    HeadStats,
    ThresholdResult,
    attention_sum,
    eligible_heads,
    max_curvature_threshold,
    mean_attention_sums,
)
from .types import (
    AttentionDump,
    AttnMap,
    BBox,
    BinaryMask,
    HeadId,
    LocheadsError,
    SampleAnnotation,
    SelectionReport,
    validate_dump,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionDump",
    "AttnMap",
    "BBox",
    "BinaryMask",
    "EvalSummary",
    "FixtureSpec",
    "GroundingConfig",
    "GroundingResult",
    "HeadId",
    "HeadStats",
    "LocalizationHeadGrounder",
    "LocheadsError",
    "MAX_ENTROPY",
    "SampleAnnotation",
    "SelectionConfig",
    "SelectionReport",
    "ThresholdResult",
    "attention_sum",
    "binarize_at_mean",
    "box_iou",
    "connected_components",
    "downsample_mask",
    "eligible_heads",
    "entropy",
    "entropy_batch",
    "evaluate_rec",
    "evaluate_res",
    "fixtures",
    "gaussian_smooth",
    "generate_corpus",
    "ground_sample",
    "grounding",
    "io",
    "mask_iou",
    "max_curvature_threshold",
    "mean_attention_sums",
    "metrics",
    "rank_iou_correlation",
    "selection",
    "selection_frequency",
    "spatial_entropy",
    "spearman",
    "stats",
    "types",
    "upscale_mask",
    "validate_dump",
]
