"""Per-patch performance: pixel accuracy and IoU for label maps, anchor scores for boxes."""

import logging
from dataclasses import dataclass

import numpy as np

from ._validation import IGNORE_ID, check_label_map, check_same_shape

logger = logging.getLogger(__name__)

SEGMENTATION_METRICS = ("pixel_accuracy", "mean_iou")
DETECTION_METRICS = ("detection_hit", "detection_iou")
DEFAULT_METRIC = {"segmentation": "pixel_accuracy", "detection": "detection_hit"}


@dataclass(frozen=True)
class PerfScore:
    value: float
    kind: str
    valid_cells: int = None
    class_id: int = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"score {self.value} outside [0, 1]")


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class TP/FP/FN cell counts over valid (non-ignored) ground-truth cells."""

    classes: tuple
    true_positive: tuple
    false_positive: tuple
    false_negative: tuple
    valid_cells: int


def _pair(gt, pred):
    gt = check_label_map(gt, "gt")
    pred = check_label_map(pred, "pred")
    check_same_shape(gt, pred, ("gt", "pred"))
    return gt, pred


def patch_pixel_accuracy(gt, pred):
    """Correct / valid cells, ignoring cells whose ground truth is ``IGNORE_ID``.

    Returns None when the patch holds no valid cell.
    """
    gt, pred = _pair(gt, pred)
    valid = gt != IGNORE_ID
    n_valid = int(np.count_nonzero(valid))
    if n_valid == 0:
        return None
    correct = int(np.count_nonzero((gt == pred) & valid))
    return PerfScore(correct / n_valid, "pixel_accuracy", n_valid)


def confusion_counts(gt, pred):
    gt, pred = _pair(gt, pred)
    valid = gt != IGNORE_ID
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    p_cls = p[p != IGNORE_ID]
    size = int(max(g.max(initial=-1), p_cls.max(initial=-1))) + 1
    tp = np.bincount(g[g == p], minlength=size)
    gt_n = np.bincount(g, minlength=size)
    pred_n = np.bincount(p_cls, minlength=size)
    present = np.flatnonzero(gt_n + pred_n)
    return ConfusionCounts(
        classes=tuple(int(c) for c in present),
        true_positive=tuple(int(tp[c]) for c in present),
        false_positive=tuple(int(pred_n[c] - tp[c]) for c in present),
        false_negative=tuple(int(gt_n[c] - tp[c]) for c in present),
        valid_cells=int(valid.sum()),
    )


def patch_iou(gt, pred):
    """Per-class IoU over classes present in gt or pred, and their mean.

    Returns ``(per_class, mean)`` where ``per_class`` maps class id to
    :class:`PerfScore` and ``mean`` is None when no class is present.
    The mean accumulates in ascending class order.
    """
    cm = confusion_counts(gt, pred)
    per_class = {}
    total = 0.0
    for c, tp, fp, fn in zip(cm.classes, cm.true_positive, cm.false_positive,
                             cm.false_negative):
        iou = tp / (tp + fp + fn)
        per_class[c] = PerfScore(iou, "class_iou", cm.valid_cells, c)
        total += iou
    if not per_class:
        return per_class, None
    return per_class, PerfScore(total / len(per_class), "mean_iou", cm.valid_cells)


def box_iou(a, b):
    """Intersection over union of two axis-aligned boxes."""
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def assign_predictions(anchors, preds, iou_min=0.5, conf_min=0.25):
    """Greedy one-to-one matching of predictions to ground-truth anchors.

    Predictions with confidence >= ``conf_min`` are visited by descending
    confidence (file order on ties); each takes the unmatched same-class
    anchor with the highest IoU >= ``iou_min`` (lowest index on ties).
    Returns, per anchor, ``(pred_index, iou)`` or None.
    """
    order = sorted((i for i, p in enumerate(preds) if p.confidence >= conf_min),
                   key=lambda i: (-preds[i].confidence, i))
    assigned = [None] * len(anchors)
    for pi in order:
        pred = preds[pi]
        best, best_iou = None, -1.0
        for ai, anchor in enumerate(anchors):
            if assigned[ai] is not None or anchor.class_id != pred.class_id:
                continue
            iou = box_iou(anchor, pred)
            if iou >= iou_min and iou > best_iou:
                best, best_iou = ai, iou
        if best is not None:
            assigned[best] = (pi, best_iou)
    return assigned


def detection_anchor_scores(anchors, preds, iou_min=0.5, conf_min=0.25,
                            kind="detection_hit"):
    """Score every ground-truth box of one image."""
    if kind not in DETECTION_METRICS:
        raise ValueError(f"unknown detection metric {kind!r}")
    scores = []
    for match in assign_predictions(anchors, preds, iou_min, conf_min):
        if kind == "detection_hit":
            value = 0.0 if match is None else 1.0
        else:
            value = 0.0 if match is None else match[1]
        scores.append(PerfScore(value, kind))
    return scores


def detection_anchor_score(anchor, preds, iou_min=0.5, conf_min=0.25,
                           kind="detection_hit", context=None):
    """Score one ground-truth box.

    ``context`` is the image's full ground-truth list in file order, which
    competes with ``anchor`` for predictions; without it the anchor is scored
    alone.
    """
    if context is None:
        return detection_anchor_scores([anchor], preds, iou_min, conf_min, kind)[0]
    context = list(context)
    pos = next((i for i, b in enumerate(context) if b is anchor), None)
    if pos is None:
        try:
            pos = context.index(anchor)
        except ValueError:
            raise ValueError("anchor is not part of its context boxes") from None
    return detection_anchor_scores(context, preds, iou_min, conf_min, kind)[pos]


def score_segmentation_patch(gt, pred, metric):
    if metric == "pixel_accuracy":
        return patch_pixel_accuracy(gt, pred)
    if metric == "mean_iou":
        return patch_iou(gt, pred)[1]
    raise ValueError(f"unknown segmentation metric {metric!r}")


def score_pool(dataset, refs, metric, iou_min=0.5, conf_min=0.25):
    """Score values (float or None for undefined) for each patch of a pool."""
    if dataset.mode == "segmentation":
        if metric not in SEGMENTATION_METRICS:
            raise ValueError(f"metric {metric!r} does not apply to segmentation")
        out = []
        for r in refs:
            s = dataset.sample(r.image_id)
            win = (slice(r.y, r.y + r.height), slice(r.x, r.x + r.width))
            score = score_segmentation_patch(s.gt[win], s.pred[win], metric)
            out.append(None if score is None else score.value)
        undefined = sum(v is None for v in out)
        if undefined:
            logger.warning("%s: %d patches hold only ignored cells and are dropped",
                           dataset.name, undefined)
        return out
    if metric not in DETECTION_METRICS:
        raise ValueError(f"metric {metric!r} does not apply to detection")
    per_image = {}
    out = []
    for r in refs:
        if r.image_id not in per_image:
            s = dataset.sample(r.image_id)
            per_image[r.image_id] = detection_anchor_scores(
                s.gt_boxes, s.pred_boxes, iou_min, conf_min, metric)
        out.append(per_image[r.image_id][r.anchor_index].value)
    return out
