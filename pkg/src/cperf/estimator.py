"""Estimator wrapper running sampling, matching, scoring and aggregation."""

import logging

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import __version__
from .core import ESTIMATORS, WEIGHTINGS, batch_prediction_error, bootstrap_ci, cperf_difference
from ._validation import PairingError
from .ingest import Dataset, validate_pairing
from .metrics import DEFAULT_METRIC, DETECTION_METRICS, SEGMENTATION_METRICS, score_pool
from .sampling import DEFAULT_MIN_BATCH, PatchSpec, sample_patches
from .similarity import MatchStats, PatchStore, build_batches

logger = logging.getLogger(__name__)


def _same_ground_truth(a, b):
    if len(a.samples) != len(b.samples):
        return False
    for sa, sb in zip(a.samples, b.samples):
        if sa.image_id != sb.image_id:
            return False
        if a.mode == "segmentation":
            if sa.gt.shape != sb.gt.shape or not (sa.gt == sb.gt).all():
                return False
        elif (sa.width, sa.height, sa.gt_boxes) != (sb.width, sb.height, sb.gt_boxes):
            return False
    return True


class ContextualizedPerformance(BaseEstimator):
    """Contextualized performance difference between two datasets.

    ``fit(dataset_a, dataset_b)`` samples patch pools from both datasets,
    forms batches of ground-truth-similar patches around reference patches,
    scores the perception output on every member and averages the per-batch
    error between the two sides.

    Parameters
    ----------
    mode : {"segmentation", "detection"} or None
        Inferred from the datasets when None.
    patch_size, patches_per_image : int
        Random window side and count per image (segmentation).
    threshold : float
        Minimum pixel similarity for batch membership.
    min_batch_per_side : int or None
        Defaults to 2 for segmentation and 4 for detection.
    anchor_scale : float
        Anchored window side as a multiple of the box's longer side (detection).
    grid : int
        Raster side that anchored windows are resampled to (detection).
    signature_grid : int
        Blocks per axis of the pruning signatures.
    metric : str or None
        ``pixel_accuracy`` or ``mean_iou`` (segmentation), ``detection_hit``
        or ``detection_iou`` (detection).  Mode default when None.
    estimator : {"mean_diff", "wasserstein"}
    weighting : {"equal", "size"}
    reference_side : {"a", "b", "both"}
        Pool the reference patches come from.
    iou_min, conf_min : float
        Detection matching thresholds.
    bootstrap : int
        Resamples for a percentile interval on the result; 0 disables.
    level : float
        Interval confidence level.
    seed : int
    n_jobs : int
        Worker threads for matching; results do not depend on it.

    Attributes
    ----------
    result_ : CPerfResult
    cperf_difference_ : float
    batches_ : list of MatchBatch
    pool_a_, pool_b_ : list of PatchRef
    scores_a_, scores_b_ : list of float or None
    pairing_ : PairingReport
    """

    def __init__(self, mode=None, patch_size=128, patches_per_image=64, threshold=0.75,
                 min_batch_per_side=None, anchor_scale=2.0, grid=64, signature_grid=8,
                 metric=None, estimator="mean_diff", weighting="equal",
                 reference_side="a", iou_min=0.5, conf_min=0.25, bootstrap=0,
                 level=0.95, seed=0, n_jobs=1):
        self.mode = mode
        self.patch_size = patch_size
        self.patches_per_image = patches_per_image
        self.threshold = threshold
        self.min_batch_per_side = min_batch_per_side
        self.anchor_scale = anchor_scale
        self.grid = grid
        self.signature_grid = signature_grid
        self.metric = metric
        self.estimator = estimator
        self.weighting = weighting
        self.reference_side = reference_side
        self.iou_min = iou_min
        self.conf_min = conf_min
        self.bootstrap = bootstrap
        self.level = level
        self.seed = seed
        self.n_jobs = n_jobs

    def _check_params(self, a, b):
        if not isinstance(a, Dataset) or not isinstance(b, Dataset):
            raise TypeError("fit expects two Dataset instances")
        if a.mode != b.mode:
            raise PairingError(f"mode mismatch: {a.name} is {a.mode}, {b.name} is {b.mode}")
        mode = self.mode or a.mode
        if mode != a.mode or mode != b.mode:
            raise ValueError(f"mode {mode!r} does not match datasets "
                             f"({a.mode!r}, {b.mode!r})")
        metric = self.metric or DEFAULT_METRIC[mode]
        allowed = SEGMENTATION_METRICS if mode == "segmentation" else DETECTION_METRICS
        if metric not in allowed:
            raise ValueError(f"metric {metric!r} does not apply to {mode}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.reference_side not in ("a", "b", "both"):
            raise ValueError("reference_side must be 'a', 'b' or 'both'")
        if self.bootstrap and not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        spec = PatchSpec(
            patch_size=self.patch_size,
            patches_per_image=self.patches_per_image,
            threshold=self.threshold,
            min_batch_per_side=self.min_batch_per_side or DEFAULT_MIN_BATCH[mode],
            anchor_scale=self.anchor_scale,
            seed=self.seed,
            grid=self.grid,
            signature_grid=self.signature_grid,
        )
        return mode, metric, spec

    def config_echo(self, a, b):
        """Every input needed to reproduce a fit, excluding worker count."""
        mode, metric, spec = self._check_params(a, b)
        return {
            "version": __version__,
            "dataset_a": a.name,
            "dataset_b": b.name,
            "mode": mode,
            "classes": list(a.legend.names),
            "metric": metric,
            "estimator": self.estimator,
            "weighting": self.weighting,
            "reference_side": self.reference_side,
            "iou_min": self.iou_min,
            "conf_min": self.conf_min,
            "bootstrap": self.bootstrap,
            "level": self.level,
            "patch_spec": spec.to_dict(),
        }

    def fit(self, X, y):
        """Compare dataset ``X`` (side A, usually real) against ``y`` (side B)."""
        a, b = X, y
        mode, metric, spec = self._check_params(a, b)
        self.pairing_ = validate_pairing(a, b)
        self.patch_spec_ = spec

        self.pool_a_ = sample_patches(a, spec)
        self.pool_b_ = self.pool_a_ if b is a else sample_patches(b, spec)
        store = PatchStore({a.name: a, b.name: b}, grid=spec.grid)
        if a.name == b.name and a is not b and not _same_ground_truth(a, b):
            raise ValueError(f"two different datasets are both named {a.name!r}")

        self.scores_a_ = score_pool(a, self.pool_a_, metric, self.iou_min, self.conf_min)
        if b is a:
            self.scores_b_ = self.scores_a_
        else:
            self.scores_b_ = score_pool(b, self.pool_b_, metric, self.iou_min,
                                        self.conf_min)

        stats = MatchStats()
        sides = ["a", "b"] if self.reference_side == "both" else [self.reference_side]
        batches = []
        for side in sides:
            refs = self.pool_a_ if side == "a" else self.pool_b_
            batches += build_batches(refs, self.pool_a_, self.pool_b_, spec, store,
                                     reference_side=side, n_jobs=self.n_jobs,
                                     stats=stats)
        self.batches_ = batches

        errors = []
        for batch in batches:
            err = batch_prediction_error(batch, self.scores_a_, self.scores_b_,
                                         self.estimator, spec.min_batch_per_side)
            if err is not None:
                errors.append(err)
        underflow = len(batches) - len(errors)
        if underflow:
            logger.warning("%d batches fell below the minimum after dropping "
                           "undefined scores", underflow)

        result = cperf_difference(errors, self.weighting)
        result.batches_formed = stats.batches_formed
        result.batches_discarded = stats.batches_discarded + underflow
        result.patches_dropped = sum(e.dropped for e in errors)
        result.config_echo = self.config_echo(a, b)
        result.match_stats = stats.to_dict()
        if self.bootstrap:
            if len(errors) >= 2:
                result.bootstrap_ci = bootstrap_ci(errors, self.bootstrap, self.level,
                                                   self.seed)
            else:
                logger.warning("bootstrap skipped: fewer than 2 batches")
        self.result_ = result
        self.cperf_difference_ = result.cperf_difference
        self.match_stats_ = stats
        return self

    def score(self, X, y):
        """Negative CPerf difference, so that higher means more similar behaviour."""
        return -self.fit(X, y).cperf_difference_

    @property
    def per_class_(self):
        check_is_fitted(self, "result_")
        return self.result_.per_class
