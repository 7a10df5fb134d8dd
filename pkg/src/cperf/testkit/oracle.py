"""Straight-line reference implementations used to check the optimized pipeline.

Nothing here imports the pipeline's helpers: sampling, rasterization,
similarity, scoring and aggregation are re-derived with plain loops.  The
only shared pieces are the domain types.  Means accumulate left to right in
member order, which the pipeline also follows, so results compare exactly.
"""

import itertools
import math
import struct
import hashlib

import numpy as np

IGNORE = 65535


def _flat(labels):
    return [v for row in np.asarray(labels).tolist() for v in row]


def _eq1(c, a):
    same = 0
    for u, v in zip(c, a):
        if u == v:
            same += 1
    return same / len(c)


def brute_force_matches(ref, pool, t, labels):
    """Every pool member with pixel similarity >= t, by exhaustive scan.

    ``labels`` maps a PatchRef to its label array.
    """
    c = _flat(labels(ref))
    out = []
    for cand in pool:
        a = _flat(labels(cand))
        if len(a) != len(c):
            raise ValueError("patch sizes differ")
        s = _eq1(c, a)
        if s >= t:
            out.append((cand, s))
    return out


def _rng_for(seed, name, image_id):
    key = (name + "\0" + image_id).encode()
    a, b, c, d = struct.unpack("<4I", hashlib.blake2b(key, digest_size=16).digest())
    return np.random.default_rng(np.random.SeedSequence([seed, a, b, c, d]))


def _random_windows(ds, p, k, seed):
    wins = []
    for s in ds.samples:
        h, w = len(s.gt), len(s.gt[0])
        if h < p or w < p:
            continue
        rng = _rng_for(seed, ds.name, s.image_id)
        xs = rng.integers(0, w - p + 1, size=k)
        ys = rng.integers(0, h - p + 1, size=k)
        for n in range(k):
            x, y = int(xs[n]), int(ys[n])
            gt = [s.gt[y + i, x:x + p].tolist() for i in range(p)]
            pred = [s.pred[y + i, x:x + p].tolist() for i in range(p)]
            wins.append({"image": s.image_id, "gt": gt, "pred": pred, "cls": None})
    return wins


def _anchored_windows(ds, scale, grid, iou_min, conf_min, kind):
    background = len({e.canonical_id for e in ds.legend.entries})
    wins = []
    for s in ds.samples:
        scores = _greedy_scores(list(s.gt_boxes), list(s.pred_boxes), iou_min, conf_min,
                                kind)
        for n, box in enumerate(s.gt_boxes):
            side = math.ceil(scale * max(box.w, box.h))
            ew = side if side < s.width else s.width
            eh = side if side < s.height else s.height
            x = math.floor(box.x + box.w / 2 - ew / 2)
            y = math.floor(box.y + box.h / 2 - eh / 2)
            x = 0 if x < 0 else (s.width - ew if x > s.width - ew else x)
            y = 0 if y < 0 else (s.height - eh if y > s.height - eh else y)
            cells = []
            for i in range(grid):
                py = y + ((i + 0.5) / grid) * eh
                for j in range(grid):
                    px = x + ((j + 0.5) / grid) * ew
                    top, value = None, background
                    for m, b in enumerate(s.gt_boxes):
                        if b.x <= px < b.x + b.w and b.y <= py < b.y + b.h:
                            key = (-(b.w * b.h), m)
                            if top is None or key > top:
                                top, value = key, b.class_id
                    cells.append(value)
            wins.append({"image": s.image_id, "labels": cells, "cls": box.class_id,
                         "score": scores[n]})
    return wins


def _overlap(a, b):
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def _greedy_scores(anchors, preds, iou_min, conf_min, kind):
    taken = {}
    used = set()
    ranked = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    for pi in ranked:
        p = preds[pi]
        if p.confidence < conf_min:
            continue
        choice = None
        for ai in range(len(anchors)):
            if ai in used or anchors[ai].class_id != p.class_id:
                continue
            v = _overlap(anchors[ai], p)
            if v >= iou_min and (choice is None or v > choice[1]):
                choice = (ai, v)
        if choice:
            used.add(choice[0])
            taken[choice[0]] = choice[1]
    if kind == "detection_hit":
        return [1.0 if ai in taken else 0.0 for ai in range(len(anchors))]
    return [taken.get(ai, 0.0) for ai in range(len(anchors))]


def brute_force_anchor_scores(anchors, preds, iou_min=0.5, conf_min=0.25,
                              kind="detection_hit"):
    """Anchor scores from an exhaustive search over all one-to-one assignments.

    Of all valid assignments (same class, IoU >= iou_min, confidence >=
    conf_min), the one chosen maximizes, prediction by prediction in order of
    descending confidence, the tuple (matched, IoU, -anchor index).
    """
    eligible = sorted((i for i, p in enumerate(preds) if p.confidence >= conf_min),
                      key=lambda i: (-preds[i].confidence, i))
    options = []
    for pi in eligible:
        opts = [None]
        for ai, a in enumerate(anchors):
            if a.class_id == preds[pi].class_id and _overlap(a, preds[pi]) >= iou_min:
                opts.append(ai)
        options.append(opts)
    best_key, best = None, {}
    for combo in itertools.product(*options):
        chosen = [ai for ai in combo if ai is not None]
        if len(chosen) != len(set(chosen)):
            continue
        key = tuple(
            (0, 0.0, 0) if ai is None else (1, _overlap(anchors[ai], preds[pi]), -ai)
            for pi, ai in zip(eligible, combo)
        )
        if best_key is None or key > best_key:
            best_key = key
            best = {ai: _overlap(anchors[ai], preds[pi])
                    for pi, ai in zip(eligible, combo) if ai is not None}
    if kind == "detection_hit":
        return [1.0 if ai in best else 0.0 for ai in range(len(anchors))]
    return [best.get(ai, 0.0) for ai in range(len(anchors))]


def _seg_score(gt, pred, metric):
    g = [v for row in gt for v in row]
    p = [v for row in pred for v in row]
    if metric == "pixel_accuracy":
        valid = right = 0
        for u, v in zip(g, p):
            if u != IGNORE:
                valid += 1
                if u == v:
                    right += 1
        return right / valid if valid else None
    classes = sorted({u for u in g if u != IGNORE}
                     | {v for u, v in zip(g, p) if u != IGNORE and v != IGNORE})
    if not classes:
        return None
    acc = 0.0
    for c in classes:
        tp = fp = fn = 0
        for u, v in zip(g, p):
            if u == IGNORE:
                continue
            if u == c and v == c:
                tp += 1
            elif v == c:
                fp += 1
            elif u == c:
                fn += 1
        acc += tp / (tp + fp + fn)
    return acc / len(classes)


def _w1(xs, ys):
    xs, ys = sorted(xs), sorted(ys)
    points = sorted(set(xs) | set(ys))
    total = 0.0
    for lo, hi in zip(points, points[1:]):
        fx = sum(1 for v in xs if v <= lo) / len(xs)
        fy = sum(1 for v in ys if v <= lo) / len(ys)
        total += abs(fx - fy) * (hi - lo)
    return total


def brute_force_cperf(a, b, spec, metric=None, *, estimator="mean_diff",
                      iou_min=0.5, conf_min=0.25):
    """CPerf difference recomputed naively, references drawn from ``a``.

    Returns None when no batch reaches ``spec.min_batch_per_side`` per side.
    """
    det = a.mode == "detection"
    metric = metric or ("detection_hit" if det else "pixel_accuracy")
    if det:
        pa = _anchored_windows(a, spec.anchor_scale, spec.grid, iou_min, conf_min, metric)
        pb = _anchored_windows(b, spec.anchor_scale, spec.grid, iou_min, conf_min, metric)
    else:
        pa = _random_windows(a, spec.patch_size, spec.patches_per_image, spec.seed)
        pb = _random_windows(b, spec.patch_size, spec.patches_per_image, spec.seed)
        for w in pa + pb:
            w["labels"] = [v for row in w["gt"] for v in row]
            w["score"] = _seg_score(w["gt"], w["pred"], metric)

    errors = []
    for ref in pa:
        sides = []
        for pool in (pa, pb):
            scores = []
            for cand in pool:
                if det and cand["cls"] != ref["cls"]:
                    continue
                if _eq1(ref["labels"], cand["labels"]) >= spec.threshold:
                    scores.append(cand["score"])
            sides.append(scores)
        if min(len(sides[0]), len(sides[1])) < spec.min_batch_per_side:
            continue
        sides = [[v for v in s if v is not None] for s in sides]
        if min(len(sides[0]), len(sides[1])) < spec.min_batch_per_side:
            continue
        if estimator == "mean_diff":
            means = []
            for s in sides:
                total = 0.0
                for v in s:
                    total += v
                means.append(total / len(s))
            errors.append(abs(means[0] - means[1]))
        else:
            errors.append(_w1(*sides))
    if not errors:
        return None
    total = 0.0
    for e in errors:
        total += e
    return total / len(errors)
