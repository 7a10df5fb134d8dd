"""Per-batch prediction error and its aggregation into the CPerf difference.

All means here accumulate left to right in a plain loop so that an
independent implementation following the same order reproduces results
bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import wasserstein_distance

from ._validation import NoBatchesError

ESTIMATORS = ("mean_diff", "wasserstein")
WEIGHTINGS = ("equal", "size")


def ordered_mean(values):
    total = 0.0
    n = 0
    for v in values:
        total += v
        n += 1
    return total / n


@dataclass(frozen=True)
class BatchError:
    reference: object
    error: float
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int
    anchor_class: int = None
    dropped: int = 0

    def to_dict(self):
        ref = self.reference
        return {
            "reference_dataset": ref.dataset,
            "reference_image": ref.image_id,
            "reference_index": ref.index,
            "x": ref.x,
            "y": ref.y,
            "side": ref.side,
            "anchor_class": self.anchor_class,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "error": self.error,
            "dropped": self.dropped,
        }


@dataclass
class CPerfResult:
    cperf_difference: float
    batch_errors: list
    batches_formed: int
    batches_discarded: int
    per_class: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)
    bootstrap_ci: tuple = None
    patches_dropped: int = 0
    match_stats: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "cperf_difference": self.cperf_difference,
            "batches_formed": self.batches_formed,
            "batches_used": len(self.batch_errors),
            "batches_discarded": self.batches_discarded,
            "patches_dropped": self.patches_dropped,
            "bootstrap_ci": list(self.bootstrap_ci) if self.bootstrap_ci else None,
            "per_class": {
                str(k): {"cperf": v[0], "batches": v[1]}
                for k, v in self.per_class.items()
            },
            "config": self.config_echo,
            "match_stats": self.match_stats,
            "batches": [e.to_dict() for e in self.batch_errors],
        }


def batch_prediction_error(batch, scores_a, scores_b, estimator="mean_diff",
                           min_batch_per_side=1):
    """Error between the score distributions of a batch's two sides.

    ``scores_a``/``scores_b`` are indexed like the batch's pools; None marks
    an undefined score, and such members are dropped.  Returns None when a
    side falls below ``min_batch_per_side`` after dropping.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    side_a = [scores_a[i] for i in batch.indices_a]
    side_b = [scores_b[i] for i in batch.indices_b]
    kept_a = [s for s in side_a if s is not None]
    kept_b = [s for s in side_b if s is not None]
    dropped = len(side_a) - len(kept_a) + len(side_b) - len(kept_b)
    if min(len(kept_a), len(kept_b)) < max(1, min_batch_per_side):
        return None
    mean_a, mean_b = ordered_mean(kept_a), ordered_mean(kept_b)
    if estimator == "mean_diff":
        error = abs(mean_a - mean_b)
    else:
        error = float(wasserstein_distance(kept_a, kept_b))
    return BatchError(batch.reference, error, mean_a, mean_b, len(kept_a), len(kept_b),
                      batch.anchor_class, dropped)


def cperf_difference(errors, weighting="equal"):
    """Mean batch error, overall and per anchor class.

    ``weighting="size"`` weights batches by their member count instead.
    """
    errors = list(errors)
    if not errors:
        raise NoBatchesError(
            "no batches were compared; the datasets share too little similar "
            "content (lower the threshold or sample more patches per image)"
        )
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}")

    def aggregate(items):
        if weighting == "equal":
            return ordered_mean(e.error for e in items)
        total = weight = 0.0
        for e in items:
            total += e.error * (e.n_a + e.n_b)
            weight += e.n_a + e.n_b
        return total / weight

    per_class = {}
    groups = {}
    for e in errors:
        if e.anchor_class is not None:
            groups.setdefault(e.anchor_class, []).append(e)
    for cls in sorted(groups):
        per_class[cls] = (aggregate(groups[cls]), len(groups[cls]))
    return CPerfResult(
        cperf_difference=aggregate(errors),
        batch_errors=errors,
        batches_formed=len(errors),
        batches_discarded=0,
        per_class=per_class,
    )


def bootstrap_ci(errors, resamples=1000, level=0.95, seed=0):
    """Percentile bootstrap interval for the mean batch error."""
    values = np.array([e.error if isinstance(e, BatchError) else float(e)
                       for e in errors])
    if len(values) < 2:
        raise ValueError("bootstrap needs at least 2 batch errors")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    rng = np.random.default_rng(seed)
    means = np.empty(resamples)
    step = max(1, 2_000_000 // len(values))
    for s in range(0, resamples, step):
        m = min(step, resamples - s)
        means[s:s + m] = values[rng.integers(0, len(values), (m, len(values)))].mean(axis=1)
    low, high = np.percentile(means, [50 * (1 - level), 50 * (1 + level)])
    # resample means cannot leave the data range; clip rounding spill
    lo, hi = values.min(), values.max()
    return float(np.clip(low, lo, hi)), float(np.clip(high, lo, hi))
