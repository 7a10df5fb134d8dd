"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run standalone with ``python tests/test_acceptance.py`` or through pytest;
the verdict lines are repeated in the terminal summary.
"""

import os
import sys
import time
from itertools import combinations

import numpy as np
import pytest

from cperf import IGNORE_ID, ContextualizedPerformance, NoBatchesError
from cperf.ingest import (
    ClassLegend,
    Dataset,
    DetSample,
    DetectionBox,
    load_dataset,
    load_manifest,
)
from cperf.metrics import detection_anchor_score
from cperf.pipeline import RunConfig, run_comparison
from cperf.sampling import PatchSpec, sample_patches, sample_random_patches
from cperf.similarity import (
    MatchStats,
    PatchStore,
    build_batches,
    compute_signature,
    find_similar,
    pixel_similarity,
    similarity_upper_bound,
)
from cperf.testkit import (
    SynthSpec,
    brute_force_anchor_scores,
    brute_force_cperf,
    brute_force_matches,
    make_synthetic,
    write_dataset,
)

THRESHOLDS = (0.5, 0.75, 0.9, 1.0)


def naive_similarity(c, a):
    c, a = c.tolist(), a.tolist()
    same = total = 0
    for row_c, row_a in zip(c, a):
        for u, v in zip(row_c, row_a):
            total += 1
            same += u == v
    return same / total


def random_patch_pair(rng):
    h, w = int(rng.integers(1, 49)), int(rng.integers(1, 49))
    classes = int(rng.integers(1, 8))
    c = rng.integers(0, classes, (h, w)).astype(np.uint16)
    c[rng.random((h, w)) < 0.1] = IGNORE_ID
    a = c.copy()
    flip = rng.random((h, w)) < rng.random()
    a[flip] = rng.integers(0, classes + 1, int(flip.sum()))
    a[a == classes] = IGNORE_ID
    return c, a


def test_criterion_1_similarity_exactness(criterion):
    with criterion(1, "pixel similarity is exact, reflexive and symmetric") as c:
        rng = np.random.default_rng(1)
        start = time.perf_counter()
        for _ in range(1000):
            p, q = random_patch_pair(rng)
            s = pixel_similarity(p, q)
            assert s == naive_similarity(p, q)
            assert pixel_similarity(p, p) == 1.0 and pixel_similarity(q, q) == 1.0
            assert pixel_similarity(q, p) == s
        elapsed = time.perf_counter() - start
        assert elapsed < 10, f"took {elapsed:.1f}s"
        c.detail = f"1000 pairs in {elapsed:.2f}s"


def signature_groups(rng):
    """Groups of same-shape patches; variants of a few bases keep bounds tight."""
    for size, classes in [(8, 2), (16, 4), (16, 6), (32, 3), (24, 5)]:
        bases = [np.kron(rng.integers(0, classes, (4, 4)),
                         np.ones((size // 4, size // 4), np.int64)) for _ in range(5)]
        patches = []
        for _ in range(70):
            p = bases[rng.integers(0, 5)].copy()
            noise = rng.random(p.shape) < rng.random() * 0.5
            p[noise] = rng.integers(0, classes, int(noise.sum()))
            p[rng.random(p.shape) < 0.03] = IGNORE_ID
            patches.append(p.astype(np.uint16))
        yield patches


def match_scenario(i):
    rng = np.random.default_rng([2, i])
    t = THRESHOLDS[i % 4]
    if i % 5 == 4:
        common = dict(images=int(rng.integers(1, 7)), size=64, mode="detection",
                      classes=int(rng.integers(2, 4)), boxes_per_image=5)
        spec = PatchSpec(threshold=t, grid=16, anchor_scale=float(rng.choice([1.5, 2.0])))
    else:
        common = dict(images=int(rng.integers(1, 5)), size=32,
                      classes=int(rng.integers(2, 6)),
                      pattern=str(rng.choice(["blocks", "stripes", "boxes"])))
        spec = PatchSpec(patch_size=int(rng.choice([8, 16])),
                         patches_per_image=int(rng.integers(1, 60)), threshold=t)
    a = make_synthetic(SynthSpec(seed=i, name="a", **common))
    b = make_synthetic(SynthSpec(seed=i + 1000, name="b", **common))
    pool = sample_patches(a, spec) + sample_patches(b, spec)
    pool = [pool[j] for j in sorted(rng.permutation(len(pool))[:500])]
    reference = pool[int(rng.integers(0, len(pool)))]
    return reference, pool, spec, PatchStore([a, b], grid=spec.grid)


def test_criterion_2_admissible_pruning(criterion):
    with criterion(2, "upper bound is admissible and search equals brute force") as c:
        rng = np.random.default_rng(2)
        start = time.perf_counter()
        pairs = violations = 0
        for patches in signature_groups(rng):
            sigs = [compute_signature(p) for p in patches]
            for i, j in combinations(range(len(patches)), 2):
                pairs += 1
                violations += (similarity_upper_bound(sigs[i], sigs[j])
                               < pixel_similarity(patches[i], patches[j]))
        assert pairs >= 10_000
        assert violations == 0, f"{violations} bound violations"

        matched = 0
        for i in range(200):
            ref, pool, spec, store = match_scenario(i)
            assert len(pool) <= 500
            got = find_similar(ref, pool, spec, store)
            want = brute_force_matches(ref, pool, spec.threshold, store.__getitem__)
            assert got == want, f"scenario {i} differs"
            matched += len(got)
        elapsed = time.perf_counter() - start
        assert elapsed < 120, f"took {elapsed:.1f}s"
        c.detail = (f"{pairs} bound pairs, 200 scenarios with {matched} matches, "
                    f"{elapsed:.1f}s")


def self_datasets():
    for i, q in enumerate([0.0, 0.1, 0.3, 0.6, 1.0]):
        yield make_synthetic(SynthSpec(images=3, size=48, classes=3 + i % 2, corrupt=q,
                                       pattern=["blocks", "stripes", "boxes"][i % 3],
                                       seed=30 + i, name=f"seg{i}")), \
            dict(patch_size=16, patches_per_image=8, threshold=0.6)
    for i, q in enumerate([0.0, 0.2, 0.5, 0.8, 1.0]):
        yield make_synthetic(SynthSpec(images=6, size=96, classes=2, mode="detection",
                                       boxes_per_image=6, corrupt=q, seed=40 + i,
                                       name=f"det{i}")), \
            dict(threshold=0.5, min_batch_per_side=2, grid=32,
                 metric=["detection_hit", "detection_iou"][i % 2])


def test_criterion_3_self_comparison_zero(criterion):
    with criterion(3, "self-comparison gives exactly 0") as c:
        values = []
        for ds, params in self_datasets():
            est = ContextualizedPerformance(**params).fit(ds, ds)
            assert est.batches_, f"{ds.name}: no batches"
            values.append(est.cperf_difference_)
        assert values == [0.0] * 10, values
        c.detail = "10 datasets, all 0.0"


def oracle_scenario(i):
    rng = np.random.default_rng([4, i])
    q = float(rng.choice([0.0, 0.1, 0.3]))
    if i % 2 == 0:
        common = dict(images=int(rng.integers(2, 4)), size=int(rng.choice([32, 48])),
                      classes=int(rng.integers(2, 5)),
                      pattern=["blocks", "stripes", "boxes"][(i // 2) % 3])
        params = dict(patch_size=int(rng.choice([8, 16])),
                      patches_per_image=int(rng.integers(4, 9)),
                      threshold=float(rng.choice([0.5, 0.6, 0.75])),
                      metric=["pixel_accuracy", "mean_iou"][(i // 2) % 2])
    else:
        common = dict(images=4, size=96, classes=int(rng.integers(2, 4)),
                      mode="detection", boxes_per_image=6)
        params = dict(threshold=float(rng.choice([0.5, 0.6])),
                      grid=int(rng.choice([16, 32])),
                      anchor_scale=float(rng.choice([1.5, 2.0])),
                      min_batch_per_side=int(rng.choice([2, 4])),
                      metric=["detection_hit", "detection_iou"][(i // 2) % 2])
    a = make_synthetic(SynthSpec(seed=100 + i, name="real", **common))
    b = make_synthetic(SynthSpec(seed=200 + i, corrupt=q, name="sim", **common))
    return a, b, params


def test_criterion_4_oracle_equality(criterion, tmp_path):
    with criterion(4, "run_comparison equals the brute-force oracle") as c:
        start = time.perf_counter()
        with_batches = 0
        for i in range(50):
            a, b, params = oracle_scenario(i)
            pa = write_dataset(a, tmp_path / f"s{i}" / "a")
            pb = write_dataset(b, tmp_path / f"s{i}" / "b")
            try:
                got = run_comparison(RunConfig(manifest_a=str(pa), manifest_b=str(pb),
                                               **params)).cperf_difference
            except NoBatchesError:
                got = None
            spec_keys = ("patch_size", "patches_per_image", "threshold", "grid",
                         "anchor_scale")
            spec = PatchSpec(**{k: v for k, v in params.items() if k in spec_keys},
                             min_batch_per_side=params.get("min_batch_per_side", 2))
            want = brute_force_cperf(load_dataset(load_manifest(pa)),
                                     load_dataset(load_manifest(pb)), spec,
                                     params["metric"])
            assert got == want, f"scenario {i}: {got!r} != {want!r}"
            with_batches += got is not None
        elapsed = time.perf_counter() - start
        assert with_batches >= 40, f"only {with_batches} scenarios formed batches"
        assert elapsed < 300, f"took {elapsed:.1f}s"
        c.detail = f"50 scenarios ({with_batches} with batches) in {elapsed:.1f}s"


def test_criterion_5_determinism(criterion, tmp_path):
    with criterion(5, "jobs=1 and jobs=8 give byte-identical reports") as c:
        cases = [
            (SynthSpec(images=6, size=64, classes=4, seed=5, name="real"),
             SynthSpec(images=6, size=64, classes=4, seed=6, corrupt=0.2, name="sim"),
             dict(patch_size=16, patches_per_image=24, threshold=0.6)),
            (SynthSpec(images=8, size=96, classes=3, mode="detection", seed=5, name="real"),
             SynthSpec(images=8, size=96, classes=3, mode="detection", seed=6, corrupt=0.4,
                       name="sim"),
             dict(threshold=0.5, min_batch_per_side=2, grid=32)),
        ]
        for n, (sa, sb, params) in enumerate(cases):
            pa = write_dataset(make_synthetic(sa), tmp_path / f"c{n}" / "a")
            pb = write_dataset(make_synthetic(sb), tmp_path / f"c{n}" / "b")
            outputs = []
            for jobs in (1, 8):
                out = tmp_path / f"c{n}" / f"jobs{jobs}"
                run_comparison(RunConfig(manifest_a=str(pa), manifest_b=str(pb), out=str(out),
                                         jobs=jobs, reference_side="both", bootstrap=200,
                                         **params))
                outputs.append({f: (out / f"cperf.{f}").read_bytes()
                                for f in ("json", "csv", "svg")})
            assert outputs[0] == outputs[1], f"case {n} differs"
        c.detail = "segmentation and detection, json/csv/svg identical"


def test_criterion_6_corruption_monotone(criterion):
    with criterion(6, "mean CPerf difference increases with corruption") as c:
        levels = (0.0, 0.1, 0.3)
        means = []
        for q in levels:
            values = []
            for seed in range(20):
                a = make_synthetic(SynthSpec(images=4, size=48, classes=4, seed=seed,
                                             name="real"))
                b = make_synthetic(SynthSpec(images=4, size=48, classes=4, seed=seed + 500,
                                             corrupt=q, name="sim"))
                est = ContextualizedPerformance(patch_size=16, patches_per_image=16,
                                                threshold=0.5).fit(a, b)
                values.append(est.cperf_difference_)
            if q == 0.0:
                assert values == [0.0] * 20, values
            means.append(sum(values) / len(values))
        assert means[0] == 0.0 and means[0] < means[1] < means[2], means
        c.detail = "means " + ", ".join(f"q={q}: {m:.4f}" for q, m in zip(levels, means))


def fixed_detection(name, images=6):
    box = DetectionBox(0, 40, 40, 16, 16, 1.0)
    pred = DetectionBox(0, 40, 40, 16, 16, 0.9)
    legend = ClassLegend.from_classes([{"raw_id": 1, "name": "cone"}])
    samples = tuple(DetSample(f"img_{i}", 96, 96, (box,), (pred,)) for i in range(images))
    return Dataset(name, "detection", legend, samples)


def test_criterion_7_presets(criterion, tmp_path):
    with criterion(7, "presets echo their parameter tuples") as c:
        expected = {
            "city128": ("segmentation", {"patch_size": 128, "patches_per_image": 64,
                                         "threshold": 0.75}),
            "city256": ("segmentation", {"patch_size": 256, "patches_per_image": 16,
                                         "threshold": 0.75}),
            "cones": ("detection", {"threshold": 0.8, "min_batch_per_side": 4}),
        }
        for preset, (mode, tuple_) in expected.items():
            if mode == "segmentation":
                size = tuple_["patch_size"]
                ds = make_synthetic(SynthSpec(images=2, size=size, classes=3, seed=7,
                                              name=preset))
            else:
                ds = fixed_detection(preset)
            path = write_dataset(ds, tmp_path / preset)
            result = run_comparison(RunConfig(manifest_a=str(path), manifest_b=str(path),
                                              preset=preset))
            echo = result.config_echo
            assert echo["preset"] == preset and echo["mode"] == mode
            got = {k: echo["patch_spec"][k] for k in tuple_}
            assert got == tuple_, f"{preset}: {got}"
        c.detail = "city128, city256, cones"


def B(cls, x, y, w, h, conf=1.0):
    return DetectionBox(cls, x, y, w, h, conf)


# (anchors, predictions); each scenario targets one matching rule
BOX_SCENARIOS = [
    ([B(0, 0, 0, 10, 10)], [B(0, 0, 0, 10, 10, 0.9)]),
    ([B(0, 0, 0, 10, 10)], []),
    ([B(0, 0, 0, 10, 10)], [B(1, 0, 0, 10, 10, 0.9)]),
    ([B(0, 0, 0, 10, 10)], [B(0, 0, 0, 10, 10, 0.2)]),
    ([B(0, 0, 0, 10, 10)], [B(0, 0, 0, 10, 10, 0.25)]),
    ([B(0, 0, 0, 10, 10)], [B(0, 0, 0, 10, 20, 0.9)]),
    ([B(0, 0, 0, 10, 10)], [B(0, 0, 0, 10, 21, 0.9)]),
    ([B(0, 0, 0, 10, 10), B(0, 6, 0, 10, 10)], [B(0, 5, 0, 10, 10, 0.8)]),
    ([B(0, 0, 0, 10, 10), B(0, 4, 0, 10, 10)], [B(0, 2, 0, 10, 10, 0.8)]),
    ([B(0, 0, 0, 10, 10)], [B(0, 1, 0, 10, 10, 0.6), B(0, 0, 0, 10, 10, 0.9)]),
    ([B(0, 0, 0, 10, 10)], [B(0, 1, 0, 10, 10, 0.7), B(0, 0, 0, 10, 10, 0.7)]),
    ([B(0, 0, 0, 10, 10), B(0, 3, 0, 10, 10)],
     [B(0, 2, 0, 10, 10, 0.9), B(0, 5, 0, 10, 10, 0.8)]),
    ([B(0, 0, 0, 10, 10), B(1, 3, 0, 10, 10)],
     [B(0, 2, 0, 10, 10, 0.9), B(1, 5, 0, 10, 10, 0.8)]),
    ([B(0, 20 * i, 0, 10, 10) for i in range(5)],
     [B(0, 20 * i, 0, 10, 10, 0.5 + 0.1 * i) for i in range(5)]),
    ([B(0, 20 * i, 0, 10, 10) for i in range(5)],
     [B(0, 20 * i + i, 1, 10, 10, 0.9) for i in range(5)]),
    ([B(0, 0, 0, 10, 10), B(0, 2, 2, 10, 10), B(0, 4, 4, 10, 10)],
     [B(0, 1, 1, 10, 10, 0.9), B(0, 3, 3, 10, 10, 0.8)]),
    ([B(0, 0, 0, 40, 40)], [B(0, 10, 10, 10, 10, 0.9)]),
    ([B(0, 0, 0, 40, 40), B(0, 15, 15, 10, 10)], [B(0, 15, 15, 10, 10, 0.9)]),
    ([B(0, 0, 0, 40, 40), B(0, 15, 15, 10, 10)],
     [B(0, 15, 15, 10, 10, 0.9), B(0, 0, 0, 38, 38, 0.95)]),
    ([B(0, 0, 0, 10, 10), B(0, 30, 0, 10, 10)],
     [B(0, 0, 0, 10, 10, 0.1), B(0, 30, 0, 10, 10, 0.24)]),
    ([B(0, 0, 0, 10, 10), B(1, 0, 0, 10, 10), B(0, 30, 0, 10, 10), B(1, 30, 0, 10, 10)],
     [B(1, 0, 0, 10, 10, 0.9), B(0, 30, 0, 10, 10, 0.8), B(0, 1, 0, 10, 10, 0.3)]),
    ([B(0, 0, 0, 10, 10)], [B(0, 10, 0, 10, 10, 0.9)]),
    ([B(0, 0, 0, 10, 10), B(0, 0, 0, 10, 10)],
     [B(0, 0, 0, 10, 10, 0.9), B(0, 0, 0, 10, 10, 0.9)]),
    ([B(0, 0, 0, 10, 10), B(0, 0, 0, 10, 10)], [B(0, 0, 0, 10, 10, 0.9)]),
    ([B(0, 0, 0, 10, 10), B(0, 2, 0, 10, 10)],
     [B(0, 3, 0, 10, 10, 1.0), B(0, 0, 0, 10, 10, 0.3)]),
    ([B(0, 0.5, 0.25, 9.5, 10.75)], [B(0, 1.25, 0.0, 9.0, 11.5, 0.55)]),
    ([B(0, 10 * i, 0, 10, 10) for i in range(4)],
     [B(0, 10 * i + 5, 0, 10, 10, 0.9 - 0.1 * i) for i in range(4)]),
    ([B(0, 0, 0, 10, 10), B(0, 4, 0, 10, 10), B(0, 8, 0, 10, 10)],
     [B(0, 4, 0, 10, 10, 0.9), B(0, 5, 0, 10, 10, 0.8), B(0, 1, 0, 10, 10, 0.7)]),
    ([B(1, 20 * i, 0, 10, 10) for i in range(5)],
     [B(0, 20 * i, 0, 10, 10, 0.9) for i in range(5)]),
    ([B(2, 100, 50, 30, 20), B(2, 110, 55, 30, 20)],
     [B(2, 104, 50, 30, 20, 0.6), B(2, 112, 58, 30, 20, 0.6)]),
]


def test_criterion_8_detection_scoring(criterion):
    with criterion(8, "detection anchor scores equal the exhaustive oracle") as c:
        assert len(BOX_SCENARIOS) == 30
        checked = 0
        for n, (anchors, preds) in enumerate(BOX_SCENARIOS):
            assert len(anchors) <= 5 and len(preds) <= 5
            for kind in ("detection_hit", "detection_iou"):
                want = brute_force_anchor_scores(anchors, preds, 0.5, 0.25, kind)
                got = [detection_anchor_score(a, preds, 0.5, 0.25, kind, context=anchors).value
                       for a in anchors]
                assert got == want, f"scenario {n} ({kind}): {got} != {want}"
                checked += len(anchors)
        c.detail = f"30 scenarios, {checked} anchor scores"


@pytest.mark.slow
def test_criterion_9_throughput(criterion):
    with criterion(9, "10k x 10k matching at p=128 within 10 minutes") as c:
        n, classes = 10_000, 4
        images = -(-n // 64)
        common = dict(images=images, size=512, classes=classes, pattern="blocks")
        a = make_synthetic(SynthSpec(seed=1, name="A", **common))
        b = make_synthetic(SynthSpec(seed=2, name="B", **common))
        spec = PatchSpec(patch_size=128, patches_per_image=64, threshold=0.75)
        pool_a = sample_random_patches(a, spec)[:n]
        pool_b = sample_random_patches(b, spec)[:n]
        jobs = int(os.environ.get("CPERF_JOBS") or os.cpu_count() or 1)
        stats = MatchStats()
        start = time.perf_counter()
        batches = build_batches(pool_a, pool_a, pool_b, spec, PatchStore([a, b]),
                                n_jobs=jobs, stats=stats)
        elapsed = time.perf_counter() - start
        assert len(pool_a) == len(pool_b) == n
        assert elapsed < 600, f"took {elapsed:.0f}s"
        assert stats.skip_ratio >= 0.5, f"skip ratio {stats.skip_ratio:.3f}"
        c.detail = (f"{elapsed:.0f}s on {jobs} worker(s), skip ratio "
                    f"{stats.skip_ratio:.3f}, {len(batches)} batches")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
