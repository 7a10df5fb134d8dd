"""Dataset manifests, label rasters and box files.

A manifest is a JSON or YAML document::

    name: cityscapes
    mode: segmentation            # or detection
    legend:
      classes:
        - {raw_id: 7, name: road}
        - {raw_id: 26, name: car}
      ignore_raw_ids: [255]
    samples:
      - {image_id: aachen_0001, gt_path: gt/0001.png, pred_path: pred/0001.png}

Detection samples carry ``width``, ``height``, ``gt_boxes_path`` and
``pred_boxes_path`` instead of raster paths.  Relative paths resolve against
the manifest's directory.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from ._validation import (
    IGNORE_ID,
    LABEL_DTYPE,
    DataError,
    ManifestError,
    PairingError,
    readonly,
)

logger = logging.getLogger(__name__)

MODES = ("segmentation", "detection")


@dataclass(frozen=True)
class LegendEntry:
    raw_id: int
    canonical_id: int
    name: str


@dataclass(frozen=True)
class ClassLegend:
    """Mapping from a dataset's raw label IDs to a dense canonical vocabulary."""

    entries: tuple
    ignore_raw_ids: frozenset = frozenset()

    def __post_init__(self):
        by_name = {}
        seen_raw = set()
        for e in self.entries:
            if e.raw_id in seen_raw:
                raise ManifestError(f"raw id {e.raw_id} mapped more than once")
            seen_raw.add(e.raw_id)
            if by_name.setdefault(e.name, e.canonical_id) != e.canonical_id:
                raise ManifestError(f"class {e.name!r} has two canonical ids")
            if not 0 <= e.raw_id < IGNORE_ID:
                raise ManifestError(f"raw id {e.raw_id} outside [0, {IGNORE_ID})")
        ids = sorted(set(by_name.values()))
        if ids != list(range(len(ids))):
            raise ManifestError("canonical ids must be dense and start at 0")
        if len(set(by_name.values())) != len(by_name):
            raise ManifestError("canonical ids must be unique per class name")
        overlap = seen_raw & set(self.ignore_raw_ids)
        if overlap:
            raise ManifestError(f"ignore_raw_ids overlap mapped ids: {sorted(overlap)}")

    @classmethod
    def from_classes(cls, classes, ignore_raw_ids=()):
        """Build a legend from ``[{raw_id, name}, ...]``.

        Canonical ids are assigned densely in order of first appearance of
        each name, so several raw ids may share one class.
        """
        canonical = {}
        entries = []
        for item in classes:
            try:
                raw, name = int(item["raw_id"]), str(item["name"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"bad legend entry {item!r}") from exc
            cid = canonical.setdefault(name, len(canonical))
            entries.append(LegendEntry(raw, cid, name))
        return cls(tuple(entries), frozenset(int(r) for r in ignore_raw_ids))

    @property
    def names(self):
        """Class names indexed by canonical id."""
        out = {}
        for e in self.entries:
            out.setdefault(e.canonical_id, e.name)
        return tuple(out[i] for i in range(len(out)))

    @property
    def n_classes(self):
        return len(self.names)

    @property
    def background_id(self):
        """Canonical id used for empty space when boxes are rasterized."""
        return self.n_classes

    def lookup_table(self):
        lut = np.full(IGNORE_ID + 1, IGNORE_ID, dtype=LABEL_DTYPE)
        known = np.zeros(IGNORE_ID + 1, dtype=bool)
        for e in self.entries:
            lut[e.raw_id] = e.canonical_id
            known[e.raw_id] = True
        for r in self.ignore_raw_ids:
            if 0 <= r <= IGNORE_ID:
                known[r] = True
        return lut, known

    def resolve(self, cls):
        """Canonical id for a class given by name or raw id."""
        if isinstance(cls, str) and not cls.lstrip("-").isdigit():
            try:
                return self.names.index(cls)
            except ValueError:
                raise DataError(f"unknown class name {cls!r}") from None
        raw = int(cls)
        for e in self.entries:
            if e.raw_id == raw:
                return e.canonical_id
        raise DataError(f"unmapped raw class id {raw}")


@dataclass(frozen=True)
class SegSample:
    image_id: str
    gt: np.ndarray
    pred: np.ndarray
    image_path: Path = None

    @property
    def width(self):
        return self.gt.shape[1]

    @property
    def height(self):
        return self.gt.shape[0]


@dataclass(frozen=True)
class DetectionBox:
    class_id: int
    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class DetSample:
    image_id: str
    width: int
    height: int
    gt_boxes: tuple
    pred_boxes: tuple
    image_path: Path = None


@dataclass(frozen=True)
class Dataset:
    name: str
    mode: str
    legend: ClassLegend
    samples: tuple
    unmapped_pixels: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise DataError(f"unknown mode {self.mode!r}")
        if not self.samples:
            raise DataError(f"dataset {self.name!r} has no samples")
        kind = SegSample if self.mode == "segmentation" else DetSample
        if not all(isinstance(s, kind) for s in self.samples):
            raise DataError(f"dataset {self.name!r} mixes sample kinds")
        index = {s.image_id: s for s in self.samples}
        if len(index) != len(self.samples):
            raise DataError(f"duplicate image id in dataset {self.name!r}")
        object.__setattr__(self, "_index", index)

    def sample(self, image_id):
        return self._index[image_id]


@dataclass(frozen=True)
class ManifestDescription:
    """Parsed manifest; no pixel data is loaded yet."""

    name: str
    mode: str
    legend: ClassLegend
    samples: tuple
    root: Path
    path: Path = None


def _read_structured(path):
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    return yaml.safe_load(text)


def load_manifest(path):
    """Parse a manifest file into a :class:`ManifestDescription`."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = _read_structured(path)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"malformed manifest {path}: expected a mapping")
    for key in ("name", "mode", "legend", "samples"):
        if key not in doc:
            raise ManifestError(f"manifest {path} lacks field {key!r}")
    mode = doc["mode"]
    if mode not in MODES:
        raise ManifestError(f"manifest {path}: mode must be one of {MODES}")

    legend_doc = doc["legend"]
    if isinstance(legend_doc, dict):
        classes = legend_doc.get("classes", [])
        ignore = legend_doc.get("ignore_raw_ids", doc.get("ignore_raw_ids", []))
    else:
        classes, ignore = legend_doc, doc.get("ignore_raw_ids", [])
    legend = ClassLegend.from_classes(classes, ignore)

    if mode == "segmentation":
        required = ("image_id", "gt_path", "pred_path")
    else:
        required = ("image_id", "width", "height", "gt_boxes_path", "pred_boxes_path")
    samples = []
    seen = set()
    for item in doc["samples"] or []:
        if not isinstance(item, dict) or any(k not in item for k in required):
            raise ManifestError(f"sample entry {item!r} needs fields {required}")
        image_id = str(item["image_id"])
        if image_id in seen:
            raise ManifestError(f"duplicate image id {image_id!r} in {path}")
        seen.add(image_id)
        samples.append(dict(item, image_id=image_id))
    if not samples:
        raise ManifestError(f"manifest {path} lists no samples")
    return ManifestDescription(
        name=str(doc["name"]),
        mode=mode,
        legend=legend,
        samples=tuple(samples),
        root=path.parent,
        path=path,
    )


def read_label_raster(path):
    """Read a single-channel integer raster as a 2D array of raw IDs."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            bands = img.getbands()
            if len(bands) != 1:
                raise DataError(f"{path}: raster has {len(bands)} channels, expected 1")
            arr = np.asarray(img)
    except (OSError, ValueError) as exc:
        raise DataError(f"unreadable raster {path}: {exc}") from exc
    if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.integer):
        raise DataError(f"{path}: not a single-channel integer raster")
    if arr.size and (arr.min() < 0 or arr.max() > IGNORE_ID):
        raise DataError(f"{path}: raw ids exceed 16 bits")
    return arr


def read_boxes(path, legend, width, height, *, predictions):
    """Read a box file (list of ``{class, x, y, w, h[, confidence]}``)."""
    path = Path(path)
    try:
        doc = _read_structured(path)
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as exc:
        raise DataError(f"unreadable box file {path}: {exc}") from exc
    boxes = []
    for item in doc or []:
        try:
            x, y, w, h = (float(item[k]) for k in ("x", "y", "w", "h"))
            cls = item["class"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad box entry {item!r}") from exc
        if predictions:
            if "confidence" not in item:
                raise DataError(f"{path}: prediction box lacks confidence")
            conf = float(item["confidence"])
        else:
            conf = float(item.get("confidence", 1.0))
        if not 0.0 <= conf <= 1.0:
            raise DataError(f"{path}: confidence {conf} outside [0, 1]")
        if w <= 0 or h <= 0:
            raise DataError(f"{path}: box with non-positive size {item!r}")
        if x >= width or y >= height or x + w <= 0 or y + h <= 0:
            raise DataError(f"{path}: box {item!r} lies outside the image")
        boxes.append(DetectionBox(legend.resolve(cls), x, y, w, h, conf))
    return tuple(boxes)


def _optional_path(root, item, key):
    return root / item[key] if item.get(key) else None


def _load_seg_sample(desc, item, lut, known):
    root = desc.root
    gt_raw = read_label_raster(root / item["gt_path"])
    pred_raw = read_label_raster(root / item["pred_path"])
    if gt_raw.shape != pred_raw.shape:
        raise DataError(
            f"dimension mismatch for {item['image_id']!r}: "
            f"gt {gt_raw.shape[::-1]} vs pred {pred_raw.shape[::-1]}"
        )
    unmapped = int(np.count_nonzero(~known[gt_raw])) + int(
        np.count_nonzero(~known[pred_raw])
    )
    sample = SegSample(
        image_id=item["image_id"],
        gt=readonly(lut[gt_raw]),
        pred=readonly(lut[pred_raw]),
        image_path=_optional_path(root, item, "image_path"),
    )
    return sample, unmapped


def _load_det_sample(desc, item):
    root = desc.root
    width, height = int(item["width"]), int(item["height"])
    if width <= 0 or height <= 0:
        raise DataError(f"sample {item['image_id']!r} has non-positive size")
    sample = DetSample(
        image_id=item["image_id"],
        width=width,
        height=height,
        gt_boxes=read_boxes(root / item["gt_boxes_path"], desc.legend, width, height,
                            predictions=False),
        pred_boxes=read_boxes(root / item["pred_boxes_path"], desc.legend, width, height,
                              predictions=True),
        image_path=_optional_path(root, item, "image_path"),
    )
    return sample, 0


def load_dataset(manifest, n_jobs=1):
    """Load every sample of a manifest into an immutable :class:`Dataset`.

    Raw IDs missing from the legend become ``IGNORE_ID``; their pixel counts
    are kept in ``Dataset.unmapped_pixels`` and logged.
    """
    if not isinstance(manifest, ManifestDescription):
        manifest = load_manifest(manifest)
    if manifest.mode == "segmentation":
        lut, known = manifest.legend.lookup_table()

        def work(item):
            return _load_seg_sample(manifest, item, lut, known)
    else:
        def work(item):
            return _load_det_sample(manifest, item)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            loaded = list(pool.map(work, manifest.samples))
    else:
        loaded = [work(item) for item in manifest.samples]

    unmapped = {s.image_id: n for s, n in loaded if n}
    if unmapped:
        logger.warning(
            "%s: %d pixels carried unmapped raw ids and were set to ignore",
            manifest.name, sum(unmapped.values()),
        )
    return Dataset(
        name=manifest.name,
        mode=manifest.mode,
        legend=manifest.legend,
        samples=tuple(s for s, _ in loaded),
        unmapped_pixels=unmapped,
    )


@dataclass(frozen=True)
class PairingReport:
    mode: str
    classes: tuple
    histogram_a: dict
    histogram_b: dict


def class_histogram(dataset):
    """Pixel counts (segmentation) or ground-truth box counts (detection) per class.

    Keys are class names; ignored pixels are counted under ``"<ignore>"``.
    """
    names = dataset.legend.names
    if dataset.mode == "segmentation":
        counts = np.zeros(len(names) + 1, dtype=np.int64)
        for s in dataset.samples:
            gt = np.where(s.gt == IGNORE_ID, len(names), s.gt)
            counts += np.bincount(gt.ravel(), minlength=len(names) + 1)
        hist = {n: int(c) for n, c in zip(names, counts)}
        hist["<ignore>"] = int(counts[-1])
        return hist
    hist = dict.fromkeys(names, 0)
    for s in dataset.samples:
        for box in s.gt_boxes:
            hist[names[box.class_id]] += 1
    return hist


def validate_pairing(a, b):
    """Check that two datasets share mode and canonical vocabulary."""
    if a.mode != b.mode:
        raise PairingError(f"mode mismatch: {a.name}={a.mode}, {b.name}={b.mode}")
    pairs_a = set(enumerate(a.legend.names))
    pairs_b = set(enumerate(b.legend.names))
    if pairs_a != pairs_b:
        names_a, names_b = set(a.legend.names), set(b.legend.names)
        problems = []
        if names_a - names_b:
            problems.append(f"missing from {b.name}: {sorted(names_a - names_b)}")
        if names_b - names_a:
            problems.append(f"missing from {a.name}: {sorted(names_b - names_a)}")
        if not problems:
            problems.append("class order differs")
        raise PairingError("legend mismatch; " + "; ".join(problems))
    return PairingReport(
        mode=a.mode,
        classes=a.legend.names,
        histogram_a=class_histogram(a),
        histogram_b=class_histogram(b),
    )
