import json

import numpy as np
import pytest
from PIL import Image


def write_png(path, arr):
    arr = np.asarray(arr)
    path.parent.mkdir(parents=True, exist_ok=True)
    if arr.max(initial=0) <= 255:
        Image.fromarray(arr.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(arr.astype(np.uint16)).save(path)


@pytest.fixture
def seg_manifest(tmp_path):
    """Factory writing a segmentation manifest from ``{image_id: (gt, pred)}``."""

    def make(images, classes=None, ignore=(255,), name="ds", fmt="json"):
        classes = classes or [{"raw_id": 7, "name": "road"}, {"raw_id": 26, "name": "car"}]
        root = tmp_path / name
        samples = []
        for image_id, (gt, pred) in images.items():
            write_png(root / "gt" / f"{image_id}.png", gt)
            write_png(root / "pred" / f"{image_id}.png", pred)
            samples.append({"image_id": image_id, "gt_path": f"gt/{image_id}.png",
                            "pred_path": f"pred/{image_id}.png"})
        doc = {"name": name, "mode": "segmentation",
               "legend": {"classes": classes, "ignore_raw_ids": list(ignore)},
               "samples": samples}
        path = root / f"manifest.{fmt}"
        if fmt == "json":
            path.write_text(json.dumps(doc))
        else:
            import yaml
            path.write_text(yaml.safe_dump(doc))
        return path

    return make


@pytest.fixture
def det_manifest(tmp_path):
    """Factory writing a detection manifest from ``{image_id: (w, h, gt, pred)}``."""

    def make(images, classes=None, name="det"):
        classes = classes or [{"raw_id": 1, "name": "red"}, {"raw_id": 2, "name": "green"}]
        root = tmp_path / name
        root.mkdir(parents=True, exist_ok=True)
        samples = []
        for image_id, (w, h, gt, pred) in images.items():
            (root / f"{image_id}_gt.json").write_text(json.dumps(gt))
            (root / f"{image_id}_pred.json").write_text(json.dumps(pred))
            samples.append({"image_id": image_id, "width": w, "height": h,
                            "gt_boxes_path": f"{image_id}_gt.json",
                            "pred_boxes_path": f"{image_id}_pred.json"})
        doc = {"name": name, "mode": "detection",
               "legend": {"classes": classes, "ignore_raw_ids": []},
               "samples": samples}
        path = root / "manifest.json"
        path.write_text(json.dumps(doc))
        return path

    return make


_VERDICTS = []


class _Verdict:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        note = self.detail if exc_type is None else f"{exc_type.__name__}: {exc}"
        line = f"[{status}] criterion {self.number}: {self.title}"
        if note:
            line += f" ({str(note).splitlines()[0][:160]})"
        print(line)
        _VERDICTS.append((self.number, line))
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c:`` records one pass/fail line."""
    return _Verdict


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
