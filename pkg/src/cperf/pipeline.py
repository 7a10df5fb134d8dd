"""Run configuration, parameter presets and the end-to-end comparison."""

import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .estimator import ContextualizedPerformance
from .ingest import load_dataset, load_manifest
from .report import FORMATS, emit_report, write_contact_sheets

logger = logging.getLogger(__name__)

JOBS_ENV = "CPERF_JOBS"

PRESETS = {
    "city128": {"mode": "segmentation", "patch_size": 128, "patches_per_image": 64,
                "threshold": 0.75},
    "city256": {"mode": "segmentation", "patch_size": 256, "patches_per_image": 16,
                "threshold": 0.75},
    "cones": {"mode": "detection", "anchor_scale": 2.0, "threshold": 0.8,
              "min_batch_per_side": 4},
}

# Fields forwarded to ContextualizedPerformance.
_ESTIMATOR_FIELDS = (
    "mode", "patch_size", "patches_per_image", "threshold", "min_batch_per_side",
    "anchor_scale", "grid", "signature_grid", "metric", "estimator", "weighting",
    "reference_side", "iou_min", "conf_min", "bootstrap", "level", "seed",
)


def default_jobs():
    value = os.environ.get(JOBS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", JOBS_ENV, value)
    return 1


@dataclass
class RunConfig:
    """Inputs of one comparison.  Fields left as None fall back to the preset,
    then to the estimator defaults."""

    manifest_a: str = None
    manifest_b: str = None
    out: str = None
    preset: str = None
    mode: str = None
    patch_size: int = None
    patches_per_image: int = None
    threshold: float = None
    min_batch_per_side: int = None
    anchor_scale: float = None
    grid: int = None
    signature_grid: int = None
    metric: str = None
    estimator: str = None
    weighting: str = None
    reference_side: str = None
    iou_min: float = None
    conf_min: float = None
    seed: int = None
    bootstrap: int = None
    level: float = None
    jobs: int = None
    emit: tuple = FORMATS
    thumbnails: int = 8

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        mapping = dict(mapping)
        if isinstance(mapping.get("emit"), str):
            mapping["emit"] = tuple(v.strip() for v in mapping["emit"].split(",") if v.strip())
        return cls(**mapping)

    @classmethod
    def from_file(cls, path):
        import yaml

        doc = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"config file {path} must hold a mapping")
        return cls.from_mapping({k.replace("-", "_"): v for k, v in doc.items()})

    def estimator_params(self):
        """Concrete estimator parameters after preset expansion."""
        params = ContextualizedPerformance().get_params()
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ValueError(f"unknown preset {self.preset!r}; "
                                 f"choose from {sorted(PRESETS)}")
            params.update(PRESETS[self.preset])
        for name in _ESTIMATOR_FIELDS:
            value = getattr(self, name)
            if value is not None:
                params[name] = value
        params["n_jobs"] = self.jobs or default_jobs()
        return params

    def build_estimator(self):
        return ContextualizedPerformance(**self.estimator_params())

    def to_dict(self):
        out = asdict(self)
        out["emit"] = list(self.emit)
        return out


def run_comparison(config):
    """Load both manifests, fit the estimator and write the requested reports."""
    started = time.time()
    manifest_a = load_manifest(config.manifest_a)
    manifest_b = load_manifest(config.manifest_b)
    est = config.build_estimator()
    a = load_dataset(manifest_a, n_jobs=est.n_jobs)
    b = a if Path(config.manifest_a).resolve() == Path(config.manifest_b).resolve() \
        else load_dataset(manifest_b, n_jobs=est.n_jobs)
    est.fit(a, b)
    result = est.result_
    result.config_echo.update(
        manifest_a=str(config.manifest_a),
        manifest_b=str(config.manifest_b),
        preset=config.preset,
    )
    if config.out:
        out = Path(config.out)
        emit_report(result, out, config.emit)
        if config.thumbnails:
            write_contact_sheets(est, a, b, out / "thumbnails", config.thumbnails)
        meta = {
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
            "elapsed_s": round(time.time() - started, 3),
            "host": platform.node(),
            "python": platform.python_version(),
            "jobs": est.n_jobs,
            "unmapped_pixels": {a.name: sum(a.unmapped_pixels.values()),
                                b.name: sum(b.unmapped_pixels.values())},
        }
        (out / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return result
