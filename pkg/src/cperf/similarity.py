"""Pixel similarity between label patches and pruned search for similar patches.

Pruning uses two admissible bounds, cheapest first:

* the global class-histogram bound ``sum_c min(h_ref[c], h_cand[c]) / n``;
* the same bound evaluated per coarse block and summed, which is never
  looser because equal cells must sit at equal positions.

Only candidates surviving both are scanned exactly, strip by strip, and a
scan stops as soon as the unscanned cells cannot lift the count to the
threshold.  None of this changes the result set.
"""

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import IGNORE_ID, check_label_map, check_same_shape

_CHUNK = 256
_STRIPS = 4


def pixel_similarity(c, a):
    """Fraction of cells whose class IDs agree (``IGNORE_ID`` equals only itself)."""
    c = np.asarray(c)
    a = np.asarray(a)
    check_same_shape(c, a, ("reference", "candidate"))
    if c.size == 0:
        raise ValueError("empty patches")
    return int(np.count_nonzero(c == a)) / c.size


def min_matches(threshold, n_cells):
    """Smallest match count ``m`` with ``m / n_cells >= threshold`` in float arithmetic."""
    m = max(0, math.ceil(threshold * n_cells))
    while m > 0 and (m - 1) / n_cells >= threshold:
        m -= 1
    while m <= n_cells and m / n_cells < threshold:
        m += 1
    return m


def _block_edges(size, g):
    return (np.arange(size) * g) // size


@dataclass(frozen=True)
class PatchSignature:
    """Class histogram plus a ``g x g`` grid of per-block majority classes."""

    class_histogram: dict
    coarse_grid: np.ndarray
    n_cells: int


def compute_signature(labels, g=8):
    labels = check_label_map(labels)
    h, w = labels.shape
    g = max(1, min(g, h, w))
    values, counts = np.unique(labels, return_counts=True)
    hist = {int(v): int(n) for v, n in zip(values, counts)}

    rows, cols = _block_edges(h, g), _block_edges(w, g)
    coarse = np.empty((g, g), dtype=labels.dtype)
    for bi in range(g):
        for bj in range(g):
            block = labels[np.ix_(rows == bi, cols == bj)]
            v, n = np.unique(block, return_counts=True)
            # np.unique sorts, so argmax picks the smallest ID on ties
            coarse[bi, bj] = v[np.argmax(n)]
    return PatchSignature(hist, coarse, labels.size)


def similarity_upper_bound(sc, sa):
    """Histogram-intersection bound; never below :func:`pixel_similarity`."""
    if sc.n_cells != sa.n_cells:
        raise ValueError(f"cell-count mismatch: {sc.n_cells} vs {sa.n_cells}")
    small, large = sorted((sc.class_histogram, sa.class_histogram), key=len)
    shared = sum(min(n, large.get(k, 0)) for k, n in small.items())
    return shared / sc.n_cells


@dataclass
class MatchStats:
    """Work counters for the pruned search."""

    pairs: int = 0
    pruned_histogram: int = 0
    pruned_blocks: int = 0
    exact_scans: int = 0
    early_exits: int = 0
    matches: int = 0
    batches_formed: int = 0
    batches_discarded: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False,
                                  compare=False)

    def add(self, **counts):
        with self._lock:
            for k, v in counts.items():
                setattr(self, k, getattr(self, k) + int(v))

    @property
    def skip_ratio(self):
        """Share of candidate pairs never scanned exactly."""
        if not self.pairs:
            return 0.0
        return (self.pruned_histogram + self.pruned_blocks) / self.pairs

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)
               if not f.name.startswith("_")}
        out["skip_ratio"] = self.skip_ratio
        return out


def _n_labels(*stacks):
    top = -1
    for s in stacks:
        if s.size:
            valid = s[s != IGNORE_ID]
            if valid.size:
                top = max(top, int(valid.max()))
    return top + 2  # one slot for IGNORE_ID


class SimilarityIndex(BaseEstimator):
    """Exact threshold search over a stack of equally sized label patches.

    Parameters
    ----------
    threshold : float
        Minimum pixel similarity for a candidate to be returned.
    signature_grid : int
        Blocks per axis for the block-histogram bound.
    n_labels : int or None
        Number of distinct label codes including one for ``IGNORE_ID``.
        Inferred from the fitted stack when None; pass it explicitly when
        queries may hold classes absent from the stack.
    prune : bool
        Disable to force an exact scan of every candidate.

    Attributes
    ----------
    histograms_ : ndarray of shape (n_patches, n_labels)
    block_histograms_ : ndarray of shape (n_patches, g * g, n_labels)
    stats_ : MatchStats
    """

    def __init__(self, threshold=0.75, signature_grid=8, n_labels=None, prune=True):
        self.threshold = threshold
        self.signature_grid = signature_grid
        self.n_labels = n_labels
        self.prune = prune

    def _encode(self, labels):
        n = self.n_labels_
        out = np.where(labels == IGNORE_ID, n - 1, labels)
        if out.size and out.max() >= n:
            raise ValueError("labels exceed the index's label range; set n_labels")
        return out.astype(self._code_dtype)

    def fit(self, X, y=None):
        X = np.asarray(X)
        if X.ndim != 3 or X.shape[1] == 0 or X.shape[2] == 0:
            raise ValueError(f"expected an (n, h, w) label stack, got {X.shape}")
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]")
        self.n_labels_ = self.n_labels or _n_labels(X)
        self._code_dtype = np.uint8 if self.n_labels_ <= 256 else np.uint16
        n, h, w = X.shape
        self.patch_shape_ = (h, w)
        self.codes_ = self._encode(X)
        g = max(1, min(self.signature_grid, h, w))
        self.n_blocks_ = g * g
        self._block_map = (_block_edges(h, g)[:, None] * g
                           + _block_edges(w, g)[None, :]).astype(np.int64)

        C, G = self.n_labels_, self.n_blocks_
        blocks = np.empty((n, G, C), dtype=np.int32)
        for s in range(0, n, _CHUNK):
            codes = self.codes_[s:s + _CHUNK]
            m = len(codes)
            flat = ((np.arange(m)[:, None, None] * G + self._block_map) * C
                    + codes).ravel()
            blocks[s:s + m] = np.bincount(flat, minlength=m * G * C).reshape(m, G, C)
        self.block_histograms_ = blocks
        self.histograms_ = blocks.sum(axis=1, dtype=np.int32)
        self.stats_ = MatchStats()
        return self

    def _ref_signature(self, codes):
        C, G = self.n_labels_, self.n_blocks_
        blocks = np.bincount((self._block_map * C + codes).ravel(),
                             minlength=G * C).reshape(G, C).astype(np.int32)
        return blocks.sum(axis=0), blocks

    def query(self, labels, threshold=None, candidates=None):
        """Indices and exact similarities of fitted patches at or above threshold.

        ``candidates`` optionally restricts the search to a subset of indices.
        Results are in ascending index order.
        """
        check_is_fitted(self, "codes_")
        labels = check_label_map(labels)
        if labels.shape != self.patch_shape_:
            raise ValueError(
                f"dimension mismatch: query {labels.shape} vs index {self.patch_shape_}"
            )
        t = self.threshold if threshold is None else threshold
        ref = self._encode(labels)
        n_cells = ref.size
        need = min_matches(t, n_cells)

        if candidates is None:
            cand = np.arange(len(self.codes_))
        else:
            cand = np.asarray(candidates, dtype=np.int64)
        pairs = len(cand)
        pruned_h = pruned_b = 0
        if self.prune and need > 0 and pairs:
            hist, blocks = self._ref_signature(ref)
            bound = np.minimum(self.histograms_[cand], hist).sum(axis=1)
            keep = bound >= need
            pruned_h = pairs - int(keep.sum())
            cand = cand[keep]
            if len(cand):
                bound = np.minimum(self.block_histograms_[cand], blocks).sum(axis=(1, 2))
                keep = bound >= need
                pruned_b = len(cand) - int(keep.sum())
                cand = cand[keep]

        scanned = len(cand)
        early = 0
        counts = np.zeros(len(cand), dtype=np.int64)
        h, w = self.patch_shape_
        edges = np.linspace(0, h, min(_STRIPS, h) + 1).astype(int)
        for r0, r1 in zip(edges[:-1], edges[1:]):
            if not len(cand):
                break
            for s in range(0, len(cand), _CHUNK * 4):
                part = cand[s:s + _CHUNK * 4]
                counts[s:s + len(part)] += np.count_nonzero(
                    self.codes_[part, r0:r1] == ref[r0:r1], axis=(1, 2))
            if need > 0:
                alive = counts + (h - r1) * w >= need
                if not alive.all():
                    early += int((~alive).sum()) if r1 < h else 0
                    cand, counts = cand[alive], counts[alive]
        self.stats_.add(pairs=pairs, pruned_histogram=pruned_h, pruned_blocks=pruned_b,
                        exact_scans=scanned, early_exits=early, matches=len(cand))
        return cand, counts / n_cells


class PatchStore:
    """Ground-truth label lookup for patches of several datasets.

    Detection patches are rasterized onto ``grid x grid`` cells; segmentation
    patches are returned verbatim.
    """

    def __init__(self, datasets, grid=64):
        if not isinstance(datasets, dict):
            datasets = {d.name: d for d in datasets}
        self.datasets = datasets
        self.grid = grid

    def __getitem__(self, ref):
        from .sampling import extract_patch_labels

        return extract_patch_labels(self.datasets[ref.dataset], ref, self.grid)

    def stack(self, refs):
        from .sampling import stack_patch_labels

        if not refs:
            return stack_patch_labels(next(iter(self.datasets.values())), [], self.grid)
        by_ds = {}
        for i, r in enumerate(refs):
            by_ds.setdefault(r.dataset, []).append(i)
        if len(by_ds) == 1:
            return stack_patch_labels(self.datasets[refs[0].dataset], refs, self.grid)
        out = None
        for name, idx in by_ds.items():
            part = stack_patch_labels(self.datasets[name], [refs[i] for i in idx],
                                      self.grid)
            if out is None:
                out = np.empty((len(refs),) + part.shape[1:], dtype=part.dtype)
            out[idx] = part
        return out


def find_similar(reference, pool, spec, store):
    """Pool members whose pixel similarity to ``reference`` is at least ``spec.threshold``.

    Returns ``[(PatchRef, similarity), ...]`` in pool order.
    """
    pool = list(pool)
    if not pool:
        return []
    labels = store[reference]
    stack = store.stack(pool)
    index = SimilarityIndex(spec.threshold, spec.signature_grid,
                            n_labels=_n_labels(stack, labels[None])).fit(stack)
    idx, sims = index.query(labels)
    return [(pool[i], float(s)) for i, s in zip(idx, sims)]


@dataclass(frozen=True, eq=False)
class MatchBatch:
    """A reference patch and the similar patches found in each dataset.

    Members are stored as index/similarity arrays into ``pool_a``/``pool_b``;
    ``members_a``/``members_b`` expand them to ``(PatchRef, similarity)``.
    """

    reference: object
    reference_side: str
    indices_a: np.ndarray
    sims_a: np.ndarray
    indices_b: np.ndarray
    sims_b: np.ndarray
    pool_a: list
    pool_b: list
    anchor_class: int = None

    @property
    def members_a(self):
        return [(self.pool_a[i], float(s)) for i, s in zip(self.indices_a, self.sims_a)]

    @property
    def members_b(self):
        return [(self.pool_b[i], float(s)) for i, s in zip(self.indices_b, self.sims_b)]

    @property
    def n_a(self):
        return len(self.indices_a)

    @property
    def n_b(self):
        return len(self.indices_b)


def _class_groups(pool):
    groups = {}
    for i, r in enumerate(pool):
        groups.setdefault(r.anchor_class, []).append(i)
    return {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()}


def build_batches(ref_pool, pool_a, pool_b, spec, store, *, reference_side="a",
                  n_jobs=1, stats=None):
    """One candidate batch per reference, keeping those with enough members per side.

    ``ref_pool`` must be drawn from ``pool_a`` (``reference_side="a"``) or
    ``pool_b`` (``"b"``).  Anchored (detection) patches only match patches of
    the same anchor class.  Output order follows ``ref_pool`` for any
    ``n_jobs``.
    """
    if reference_side not in ("a", "b"):
        raise ValueError("reference_side must be 'a' or 'b'")
    stats = stats if stats is not None else MatchStats()
    pool_a, pool_b = list(pool_a), list(pool_b)
    same_pools = pool_a == pool_b
    stack_a = store.stack(pool_a)
    stack_b = stack_a if same_pools else store.stack(pool_b)
    own_pool, own_stack = (pool_a, stack_a) if reference_side == "a" else (pool_b, stack_b)
    position = {r: i for i, r in enumerate(own_pool)}
    n_labels = _n_labels(stack_a, stack_b)

    def make_index(stack):
        index = SimilarityIndex(spec.threshold, spec.signature_grid, n_labels=n_labels)
        if len(stack):
            index.fit(stack)
        return index

    index_a = make_index(stack_a)
    index_b = index_a if same_pools else make_index(stack_b)
    groups_a = _class_groups(pool_a)
    groups_b = groups_a if same_pools else _class_groups(pool_b)
    anchored = any(r.anchor_class is not None for r in pool_a + pool_b)
    empty = np.zeros(0, dtype=np.int64)

    def search(index, pool, groups, labels, ref):
        if not pool:
            return empty, np.zeros(0)
        if anchored:
            cand = groups.get(ref.anchor_class)
            if cand is None:
                return empty, np.zeros(0)
            return index.query(labels, candidates=cand)
        return index.query(labels)

    def match(ref):
        i = position.get(ref)
        labels = own_stack[i] if i is not None else store[ref]
        ia, sa = search(index_a, pool_a, groups_a, labels, ref)
        if same_pools:
            ib, sb = ia, sa
        else:
            ib, sb = search(index_b, pool_b, groups_b, labels, ref)
        if min(len(ia), len(ib)) < spec.min_batch_per_side:
            return None
        return MatchBatch(ref, reference_side, ia, sa, ib, sb, pool_a, pool_b,
                          ref.anchor_class)

    refs = list(ref_pool)
    if n_jobs > 1 and len(refs) > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            results = list(ex.map(match, refs, chunksize=1))
    else:
        results = [match(r) for r in refs]

    for index in {id(index_a): index_a, id(index_b): index_b}.values():
        if hasattr(index, "stats_"):
            s = index.stats_
            stats.add(pairs=s.pairs, pruned_histogram=s.pruned_histogram,
                      pruned_blocks=s.pruned_blocks, exact_scans=s.exact_scans,
                      early_exits=s.early_exits, matches=s.matches)
    batches = [b for b in results if b is not None]
    stats.add(batches_formed=len(refs), batches_discarded=len(refs) - len(batches))
    return batches
