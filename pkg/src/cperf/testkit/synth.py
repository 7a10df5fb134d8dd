"""Procedural datasets with controllable content and prediction quality."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..ingest import (
    ClassLegend,
    Dataset,
    DetSample,
    DetectionBox,
    SegSample,
    load_dataset,
    load_manifest,
)
from .._validation import LABEL_DTYPE, readonly

PATTERNS = ("blocks", "stripes", "boxes")
RAW_OFFSET = 10


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic dataset recipe.

    ``corrupt`` is the fraction of ground-truth pixels (segmentation) or boxes
    (detection) perturbed in the predictions.  Ground truth depends only on
    ``seed``, so two specs differing only in ``corrupt`` share it.
    """

    images: int = 4
    size: int = 64
    classes: int = 3
    pattern: str = "blocks"
    corrupt: float = 0.0
    seed: int = 0
    mode: str = "segmentation"
    name: str = "synth"
    block: int = None
    boxes_per_image: int = 4

    def __post_init__(self):
        if not 0.0 <= self.corrupt <= 1.0:
            raise ValueError("corrupt must lie in [0, 1]")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        if self.images < 1 or self.size < 2:
            raise ValueError("need at least one image of size >= 2")
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        if self.mode not in ("segmentation", "detection"):
            raise ValueError("mode must be segmentation or detection")


def _legend(spec):
    classes = [{"raw_id": RAW_OFFSET + c, "name": f"class_{c}"} for c in range(spec.classes)]
    return classes, [255]


def _gt_map(spec, rng):
    s = spec.size
    C = spec.classes
    if spec.pattern == "blocks":
        b = spec.block or max(1, s // 4)
        n = -(-s // b)
        cells = rng.integers(0, C, size=(n, n))
        return np.kron(cells, np.ones((b, b), dtype=np.int64))[:s, :s]
    if spec.pattern == "stripes":
        out = np.empty((s, s), dtype=np.int64)
        row = 0
        while row < s:
            width = int(rng.integers(max(1, s // 8), max(2, s // 3) + 1))
            out[row:row + width] = rng.integers(0, C)
            row += width
        return out if rng.integers(0, 2) else out.T.copy()
    out = np.zeros((s, s), dtype=np.int64)
    for _ in range(spec.boxes_per_image):
        w, h = rng.integers(max(1, s // 8), max(2, s // 2), size=2)
        x, y = rng.integers(0, s - w + 1), rng.integers(0, s - h + 1)
        out[y:y + h, x:x + w] = rng.integers(1, C)
    return out


def _corrupt_map(gt, q, C, rng):
    pred = gt.copy()
    n = round(q * gt.size)
    if n:
        flat = pred.reshape(-1)
        idx = rng.choice(gt.size, size=n, replace=False)
        flat[idx] = (flat[idx] + rng.integers(1, C, size=n)) % C
    return pred


def _gt_boxes(spec, rng):
    s = spec.size
    boxes = []
    for _ in range(spec.boxes_per_image):
        w, h = (int(v) for v in rng.integers(max(2, s // 16), max(3, s // 5), size=2))
        x, y = int(rng.integers(0, s - w + 1)), int(rng.integers(0, s - h + 1))
        boxes.append(DetectionBox(int(rng.integers(0, spec.classes)), x, y, w, h, 1.0))
    return boxes


def _corrupt_boxes(gt, q, rng):
    n = round(q * len(gt))
    hit = set(rng.choice(len(gt), size=n, replace=False).tolist()) if n else set()
    preds = []
    for i, b in enumerate(gt):
        if i not in hit:
            preds.append(DetectionBox(b.class_id, b.x, b.y, b.w, b.h, 0.9))
        elif rng.integers(0, 2):
            # shifted by more than half a box: IoU with the original < 0.5
            preds.append(DetectionBox(b.class_id, b.x + b.w * 0.75, b.y, b.w, b.h, 0.6))
    return preds


def _streams(spec, i):
    return (np.random.default_rng([spec.seed, 1, i]),
            np.random.default_rng([spec.seed, 2, i]))


def make_synthetic(spec):
    """Build the dataset in memory (class ids are already canonical)."""
    classes, ignore = _legend(spec)
    legend = ClassLegend.from_classes(classes, ignore)
    samples = []
    for i in range(spec.images):
        rng_gt, rng_pred = _streams(spec, i)
        image_id = f"img_{i:04d}"
        if spec.mode == "segmentation":
            gt = _gt_map(spec, rng_gt)
            pred = _corrupt_map(gt, spec.corrupt, spec.classes, rng_pred)
            samples.append(SegSample(image_id, readonly(gt.astype(LABEL_DTYPE)),
                                     readonly(pred.astype(LABEL_DTYPE))))
        else:
            gt = _gt_boxes(spec, rng_gt)
            pred = _corrupt_boxes(gt, spec.corrupt, rng_pred)
            samples.append(DetSample(image_id, spec.size, spec.size, tuple(gt),
                                     tuple(pred)))
    return Dataset(spec.name, spec.mode, legend, tuple(samples))


def _write_raster(path, labels):
    raw = labels + RAW_OFFSET
    if raw.max() <= 255:
        Image.fromarray(raw.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(raw.astype(np.uint16)).save(path)


def _box_doc(boxes, legend, predictions):
    doc = []
    for b in boxes:
        item = {"class": legend.names[b.class_id], "x": b.x, "y": b.y, "w": b.w, "h": b.h}
        if predictions:
            item["confidence"] = b.confidence
        doc.append(item)
    return doc


def write_dataset(dataset, out_dir):
    """Write an in-memory dataset as a manifest tree; returns the manifest path."""
    out = Path(out_dir)
    legend = dataset.legend
    classes = [{"raw_id": e.raw_id, "name": e.name} for e in legend.entries]
    samples = []
    for s in dataset.samples:
        if dataset.mode == "segmentation":
            (out / "gt").mkdir(parents=True, exist_ok=True)
            (out / "pred").mkdir(parents=True, exist_ok=True)
            gt_path, pred_path = f"gt/{s.image_id}.png", f"pred/{s.image_id}.png"
            _write_raster(out / gt_path, s.gt.astype(np.int64))
            _write_raster(out / pred_path, s.pred.astype(np.int64))
            samples.append({"image_id": s.image_id, "gt_path": gt_path,
                            "pred_path": pred_path})
        else:
            (out / "boxes").mkdir(parents=True, exist_ok=True)
            gt_path = f"boxes/{s.image_id}_gt.json"
            pred_path = f"boxes/{s.image_id}_pred.json"
            (out / gt_path).write_text(json.dumps(_box_doc(s.gt_boxes, legend, False)))
            (out / pred_path).write_text(json.dumps(_box_doc(s.pred_boxes, legend, True)))
            samples.append({"image_id": s.image_id, "width": s.width, "height": s.height,
                            "gt_boxes_path": gt_path, "pred_boxes_path": pred_path})
    manifest = {
        "name": dataset.name,
        "mode": dataset.mode,
        "legend": {"classes": classes, "ignore_raw_ids": sorted(legend.ignore_raw_ids)},
        "samples": samples,
    }
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def generate_synthetic(spec, out_dir):
    """Write a synthetic manifest tree under ``out_dir`` and load it back."""
    path = write_dataset(make_synthetic(spec), out_dir)
    return load_dataset(load_manifest(path))
