"""JSON, CSV and SVG reports for a comparison result.

Report payloads carry no timestamps or host data so that identical results
produce identical bytes; run metadata goes to a separate file.
"""

import csv
import io
import json
import logging
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

logger = logging.getLogger(__name__)

FORMATS = ("json", "csv", "svg")

CSV_COLUMNS = (
    "reference_dataset", "reference_image", "reference_index", "x", "y", "side",
    "anchor_class", "class_name", "n_a", "n_b", "mean_a", "mean_b", "error", "dropped",
)


def _class_name(result, cls):
    names = result.config_echo.get("classes") or ()
    if cls is None:
        return ""
    return names[cls] if 0 <= cls < len(names) else str(cls)


def render_json(result):
    return json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"


def render_csv(result):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for e in result.batch_errors:
        row = e.to_dict()
        row["class_name"] = _class_name(result, e.anchor_class)
        writer.writerow({k: row[k] for k in CSV_COLUMNS})
    return buf.getvalue()


def render_svg(result, width=480, height=300):
    """Bar chart: one group for the overall value plus one per class."""
    cfg = result.config_echo
    groups = [("overall", result.cperf_difference, result.bootstrap_ci)]
    for cls, (value, count) in result.per_class.items():
        groups.append((_class_name(result, cls), value, None))

    spec = cfg.get("patch_spec", {})
    if cfg.get("mode") == "detection":
        scale = f"anchor x{spec.get('anchor_scale')}"
    else:
        scale = f"{spec.get('patch_size')}x{spec.get('patch_size')}"
    title = f"CPerf difference: {cfg.get('dataset_a')} vs {cfg.get('dataset_b')} ({scale})"

    left, right, top, bottom = 50, 20, 40, 40
    plot_w, plot_h = width - left - right, height - top - bottom
    ymax = max([1e-9] + [v for _, v, _ in groups]
               + [ci[1] for _, _, ci in groups if ci])
    ymax = float(np.ceil(ymax * 10) / 10) or 0.1
    slot = plot_w / len(groups)
    bar_w = slot * 0.6

    def ypos(v):
        return top + plot_h * (1 - v / ymax)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">'
        f'{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" '
        'stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in np.linspace(0, ymax, 5):
        y = ypos(tick)
        parts.append(f'<text x="{left - 5}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="10">{tick:.2f}</text>')
    for i, (label, value, ci) in enumerate(groups):
        x = left + slot * i + (slot - bar_w) / 2
        y = ypos(value)
        parts.append(f'<g class="bar-group" data-label="{escape(label)}">')
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                     f'height="{top + plot_h - y:.1f}" fill="#4c72b0"/>')
        if ci:
            cx = x + bar_w / 2
            parts.append(f'<line x1="{cx:.1f}" y1="{ypos(ci[0]):.1f}" x2="{cx:.1f}" '
                         f'y2="{ypos(ci[1]):.1f}" stroke="black"/>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{y - 4:.1f}" text-anchor="middle" '
                     f'font-size="10">{value:.3f}</text>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{top + plot_h + 15}" '
                     f'text-anchor="middle" font-size="11">{escape(label)}</text>')
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


_RENDERERS = {"json": render_json, "csv": render_csv, "svg": render_svg}


def emit_report(result, out_dir, formats=FORMATS):
    """Write ``cperf.<fmt>`` files; returns the written paths."""
    formats = [formats] if isinstance(formats, str) else list(formats)
    unknown = set(formats) - set(_RENDERERS)
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = []
    for fmt in FORMATS:
        if fmt in formats:
            path = out / f"cperf.{fmt}"
            path.write_text(_RENDERERS[fmt](result))
            paths.append(path)
    return paths


def _crop(sample, ref, size):
    from PIL import Image

    with Image.open(sample.image_path) as img:
        tile = img.convert("RGB").crop((ref.x, ref.y, ref.x + ref.width,
                                        ref.y + ref.height))
        return tile.resize((size, size))


def write_contact_sheets(estimator, a, b, out_dir, cap=8, per_side=6, tile=96):
    """Side-by-side patch sheets for the first ``cap`` batches.

    Row one shows side A members, row two side B.  Skipped unless the
    manifests list image paths.
    """
    from PIL import Image

    if not any(s.image_path for d in (a, b) for s in d.samples):
        return []
    datasets = {a.name: a, b.name: b}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for n, batch in enumerate(estimator.batches_[:cap]):
        sheet = Image.new("RGB", (tile * per_side, tile * 2), "white")
        for row, members in enumerate((batch.members_a, batch.members_b)):
            for col, (ref, _) in enumerate(members[:per_side]):
                sample = datasets[ref.dataset].sample(ref.image_id)
                if sample.image_path is None:
                    continue
                try:
                    sheet.paste(_crop(sample, ref, tile), (col * tile, row * tile))
                except OSError as exc:
                    logger.warning("thumbnail skipped for %s: %s", ref.image_id, exc)
        path = out / f"batch_{n:04d}.png"
        sheet.save(path)
        written.append(path)
    return written
