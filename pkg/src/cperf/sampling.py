"""Candidate patch pools: random windows for segmentation, box-anchored windows for detection."""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import LABEL_DTYPE, DataError, check_unit_interval

logger = logging.getLogger(__name__)

DEFAULT_MIN_BATCH = {"segmentation": 2, "detection": 4}


@dataclass(frozen=True)
class PatchSpec:
    """Patch sampling and matching parameters.

    ``patch_size`` and ``patches_per_image`` apply to segmentation;
    ``anchor_scale`` and ``grid`` (the raster side that anchored patches are
    resampled to) apply to detection.
    """

    patch_size: int = 128
    patches_per_image: int = 64
    threshold: float = 0.75
    min_batch_per_side: int = 2
    anchor_scale: float = 2.0
    seed: int = 0
    grid: int = 64
    signature_grid: int = 8

    def __post_init__(self):
        check_unit_interval(self.threshold, "threshold", open_low=True)
        if self.patches_per_image < 1:
            raise ValueError("patches_per_image must be >= 1")
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")
        if self.min_batch_per_side < 1:
            raise ValueError("min_batch_per_side must be >= 1")
        if not self.anchor_scale > 0:
            raise ValueError("anchor_scale must be > 0")
        if self.grid < 1 or self.signature_grid < 1:
            raise ValueError("grid sizes must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PatchRef:
    """A located window in one image.

    ``side`` is the nominal square side.  ``width``/``height`` are the real
    extent, which only differ from ``side`` when an anchored patch was clipped
    to a smaller image.
    """

    dataset: str
    image_id: str
    x: int
    y: int
    side: int
    width: int
    height: int
    index: int = 0
    anchor_class: int = None
    anchor_index: int = None

    def to_dict(self):
        return asdict(self)


def image_rng(seed, dataset_name, image_id):
    """Independent generator per image, keyed by (seed, dataset, image)."""
    digest = hashlib.blake2b(
        f"{dataset_name}\x00{image_id}".encode(), digest_size=16
    ).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *words]))


def sample_random_patches(dataset, spec):
    """Draw ``k`` uniformly placed ``p x p`` windows per image.

    Images smaller than the patch are skipped with a warning.
    """
    if dataset.mode != "segmentation":
        raise ValueError("random patches are for segmentation datasets")
    p, k = spec.patch_size, spec.patches_per_image
    refs = []
    skipped = 0
    for sample in dataset.samples:
        h, w = sample.gt.shape
        if w < p or h < p:
            skipped += 1
            continue
        rng = image_rng(spec.seed, dataset.name, sample.image_id)
        xs = rng.integers(0, w - p + 1, size=k)
        ys = rng.integers(0, h - p + 1, size=k)
        refs.extend(
            PatchRef(dataset.name, sample.image_id, int(x), int(y), p, p, p, i)
            for i, (x, y) in enumerate(zip(xs, ys))
        )
    if skipped:
        logger.warning("%s: skipped %d images smaller than %dx%d",
                       dataset.name, skipped, p, p)
    if not refs:
        raise DataError(f"{dataset.name}: no image is at least {p}x{p}")
    return refs


def anchor_window(box, scale, width, height):
    """Square window of side ``ceil(scale * max(w, h))`` centred on ``box``.

    Returns ``(x, y, side, extent_w, extent_h)``; the window is shifted to lie
    inside the image and clipped per axis when it is larger than the image.
    """
    side = math.ceil(scale * max(box.w, box.h))
    ew, eh = min(side, width), min(side, height)
    cx, cy = box.x + box.w / 2, box.y + box.h / 2
    x = min(max(math.floor(cx - ew / 2), 0), width - ew)
    y = min(max(math.floor(cy - eh / 2), 0), height - eh)
    return x, y, side, ew, eh


def anchor_object_patches(dataset, spec):
    """One window per ground-truth box, in file order."""
    if dataset.mode != "detection":
        raise ValueError("anchored patches are for detection datasets")
    refs = []
    for sample in dataset.samples:
        for i, box in enumerate(sample.gt_boxes):
            x, y, side, ew, eh = anchor_window(box, spec.anchor_scale,
                                               sample.width, sample.height)
            refs.append(PatchRef(dataset.name, sample.image_id, x, y, side, ew, eh,
                                 index=i, anchor_class=box.class_id, anchor_index=i))
    return refs


def sample_patches(dataset, spec):
    if dataset.mode == "segmentation":
        return sample_random_patches(dataset, spec)
    return anchor_object_patches(dataset, spec)


def _check_bounds(ref, width, height):
    if (ref.x < 0 or ref.y < 0 or ref.width < 1 or ref.height < 1
            or ref.x + ref.width > width or ref.y + ref.height > height):
        raise ValueError(f"patch {ref} lies outside its {width}x{height} image")


def rasterize_boxes(boxes, ref, grid, background):
    """Paint boxes onto a ``grid x grid`` class map sampled at cell centres.

    Larger boxes are painted first so smaller ones stay visible; equal areas
    keep file order.
    """
    out = np.full((grid, grid), background, dtype=LABEL_DTYPE)
    centres = (np.arange(grid) + 0.5) / grid
    xs = ref.x + centres * ref.width
    ys = ref.y + centres * ref.height
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].area, i))
    for i in order:
        b = boxes[i]
        cols = (xs >= b.x) & (xs < b.x + b.w)
        rows = (ys >= b.y) & (ys < b.y + b.h)
        if cols.any() and rows.any():
            out[np.ix_(rows, cols)] = b.class_id
    return out


def extract_patch_labels(dataset, ref, grid=None):
    """Ground-truth labels under a patch.

    Segmentation windows are copied verbatim; detection windows are rasterized
    onto ``grid x grid`` cells (default 64).
    """
    sample = dataset.sample(ref.image_id)
    if dataset.mode == "segmentation":
        h, w = sample.gt.shape
        _check_bounds(ref, w, h)
        return sample.gt[ref.y:ref.y + ref.height, ref.x:ref.x + ref.width].copy()
    _check_bounds(ref, sample.width, sample.height)
    return rasterize_boxes(sample.gt_boxes, ref, grid or 64,
                           dataset.legend.background_id)


def extract_patch_pred(dataset, ref):
    """Predicted labels under a segmentation patch."""
    sample = dataset.sample(ref.image_id)
    return sample.pred[ref.y:ref.y + ref.height, ref.x:ref.x + ref.width]


def stack_patch_labels(dataset, refs, grid=None):
    """Ground-truth labels of a whole pool as an ``(n, s, s)`` array."""
    if not refs:
        side = (grid or 64) if dataset.mode == "detection" else 1
        return np.zeros((0, side, side), dtype=LABEL_DTYPE)
    if dataset.mode == "segmentation":
        by_id = {s.image_id: s for s in dataset.samples}
        side = refs[0].side
        out = np.empty((len(refs), side, side), dtype=LABEL_DTYPE)
        for i, r in enumerate(refs):
            gt = by_id[r.image_id].gt
            out[i] = gt[r.y:r.y + side, r.x:r.x + side]
        return out
    return np.stack([extract_patch_labels(dataset, r, grid) for r in refs])
