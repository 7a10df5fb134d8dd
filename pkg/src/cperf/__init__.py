"""Contextualized performance (CPerf) difference between two labeled datasets."""

__version__ = "0.1.0"

from ._validation import (  # noqa: E402
    IGNORE_ID,
    CPerfError,
    DataError,
    ManifestError,
    NoBatchesError,
    PairingError,
)
from .core import BatchError, CPerfResult, batch_prediction_error, bootstrap_ci, cperf_difference  # noqa: E402
from .estimator import ContextualizedPerformance  # noqa: E402
from .ingest import (  # noqa: E402
    ClassLegend,
    Dataset,
    DetectionBox,
    DetSample,
    SegSample,
    load_dataset,
    load_manifest,
    validate_pairing,
)
from .metrics import box_iou, detection_anchor_score, patch_iou, patch_pixel_accuracy  # noqa: E402
from .sampling import (  # noqa: E402
    PatchRef,
    PatchSpec,
    anchor_object_patches,
    extract_patch_labels,
    sample_random_patches,
)
from .similarity import (  # noqa: E402
    MatchBatch,
    PatchStore,
    SimilarityIndex,
    build_batches,
    compute_signature,
    find_similar,
    pixel_similarity,
    similarity_upper_bound,
)
