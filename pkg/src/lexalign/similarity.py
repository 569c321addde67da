"""Exact nearest-neighbor retrieval under inner product and CSLS.

CSLS rescores a (query, candidate) pair as::

    2 <q, c> - r_query(q) - r_target(c)

where ``r_query(q)`` is the mean inner product of ``q`` with its ``T``
nearest candidates and ``r_target(c)`` the mean inner product of ``c``
with its ``T`` nearest queries. Neighborhoods are always ranked by inner
product.

Ties are broken toward the lower candidate index everywhere.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SimilarityMetric",
    "InnerProduct",
    "CSLS",
    "parse_metric",
    "NeighborhoodCache",
    "EmptyDictionaryError",
    "knn_inner_product",
    "build_neighborhood_cache",
    "csls_topk",
    "topk",
    "best_scores",
    "mutual_nn_pairs",
    "hub_count",
]

# rows of queries scored per block; bounds memory at block x n doubles
BLOCK = 1024


class EmptyDictionaryError(RuntimeError):
    """Mutual-NN induction found no pairs; refinement cannot proceed."""


@dataclass(frozen=True)
class SimilarityMetric:
    """Retrieval metric: plain inner product or CSLS with neighborhood ``t``."""

    kind: str = "csls"
    t: int = 10

    def __post_init__(self):
        if self.kind not in ("ip", "csls"):
            raise ValueError(f"unknown metric {self.kind!r}")
        if self.kind == "csls" and self.t < 1:
            raise ValueError("CSLS neighborhood size must be >= 1")

    @property
    def is_csls(self):
        return self.kind == "csls"

    def __str__(self):
        return f"csls(T={self.t})" if self.is_csls else "ip"


InnerProduct = SimilarityMetric("ip")


def CSLS(t=10):
    return SimilarityMetric("csls", t)


def parse_metric(name, t=10):
    name = name.lower()
    if name in ("ip", "inner", "inner_product", "dot"):
        return InnerProduct
    if name == "csls":
        return CSLS(t)
    raise ValueError(f"unknown metric {name!r}; expected 'ip' or 'csls'")


@dataclass(frozen=True)
class NeighborhoodCache:
    """Mean top-T inner products on each side of a query/candidate pairing."""

    r_query: np.ndarray
    r_target: np.ndarray
    t: int


def _as_rows(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D")
    return x


def _stable_topk(scores, k):
    """Top-k column indices per row, score-descending, ties to lower index.

    Uses a partition to shortlist candidates and then a stable sort, so the
    result is exact.
    """
    m, n = scores.shape
    if k >= n:
        idx = np.argsort(-scores, axis=1, kind="stable")
        return idx, np.take_along_axis(scores, idx, axis=1)
    part = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(scores, part, axis=1).min(axis=1)
    out_idx = np.empty((m, k), dtype=np.int64)
    for r in range(m):
        # every column tied with the k-th value must compete for the last slots
        cand = np.flatnonzero(scores[r] >= kth[r])
        order = np.argsort(-scores[r, cand], kind="stable")
        out_idx[r] = cand[order[:k]]
    return out_idx, np.take_along_axis(scores, out_idx, axis=1)


def _mean_topk(scores, t):
    """Mean of the ``t`` largest entries in each row."""
    n = scores.shape[1]
    if t > n:
        raise ValueError(f"neighborhood size {t} exceeds set size {n}")
    if t == n:
        return scores.mean(axis=1)
    part = np.partition(scores, n - t, axis=1)[:, n - t:]
    return part.mean(axis=1)


def knn_inner_product(queries, candidates, k):
    """Exact top-``k`` candidates per query by inner product.

    Returns ``(indices, scores)``, both (m, k), score-descending.
    """
    queries = _as_rows(queries, "queries")
    candidates = _as_rows(candidates, "candidates")
    if queries.shape[1] != candidates.shape[1]:
        raise ValueError("queries and candidates differ in dimension")
    n = candidates.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} candidates")
    idx = np.empty((queries.shape[0], k), dtype=np.int64)
    val = np.empty((queries.shape[0], k))
    for s in range(0, queries.shape[0], BLOCK):
        block = queries[s:s + BLOCK] @ candidates.T
        idx[s:s + BLOCK], val[s:s + BLOCK] = _stable_topk(block, k)
    return idx, val


def build_neighborhood_cache(mapped_queries, targets, t):
    """Per-query and per-target mean of the ``t`` largest cross inner products."""
    mapped_queries = _as_rows(mapped_queries, "mapped_queries")
    targets = _as_rows(targets, "targets")
    m, n = mapped_queries.shape[0], targets.shape[0]
    if t < 1 or t > m or t > n:
        raise ValueError(f"T={t} must lie in [1, min({m}, {n})]")
    r_query = np.empty(m)
    for s in range(0, m, BLOCK):
        r_query[s:s + BLOCK] = _mean_topk(mapped_queries[s:s + BLOCK] @ targets.T, t)
    r_target = np.empty(n)
    for s in range(0, n, BLOCK):
        r_target[s:s + BLOCK] = _mean_topk(targets[s:s + BLOCK] @ mapped_queries.T, t)
    return NeighborhoodCache(r_query, r_target, t)


def csls_scores(mapped_queries, targets, cache):
    """Full (m, n) CSLS score matrix for a precomputed cache."""
    return 2.0 * (mapped_queries @ targets.T) - cache.r_query[:, None] - cache.r_target[None, :]


def csls_topk(mapped_queries, targets, t, k, cache=None):
    """Exact top-``k`` candidates per query under CSLS.

    ``cache`` may be supplied to reuse (or deliberately change) the
    neighborhoods; by default they are built against ``mapped_queries``.
    """
    mapped_queries = _as_rows(mapped_queries, "mapped_queries")
    targets = _as_rows(targets, "targets")
    n = targets.shape[0]
    if t > n:
        raise ValueError(f"T={t} exceeds the {n} candidates")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} candidates")
    if cache is None:
        cache = build_neighborhood_cache(mapped_queries, targets, t)
    m = mapped_queries.shape[0]
    idx = np.empty((m, k), dtype=np.int64)
    val = np.empty((m, k))
    for s in range(0, m, BLOCK):
        q = mapped_queries[s:s + BLOCK]
        block = 2.0 * (q @ targets.T) - cache.r_query[s:s + BLOCK, None] - cache.r_target[None, :]
        idx[s:s + BLOCK], val[s:s + BLOCK] = _stable_topk(block, k)
    return idx, val


def topk(mapped_queries, targets, metric, k, cache=None):
    """Dispatch to inner-product or CSLS retrieval."""
    if metric.is_csls:
        return csls_topk(mapped_queries, targets, metric.t, k, cache=cache)
    return knn_inner_product(mapped_queries, targets, k)


def best_scores(mapped_queries, targets, metric):
    """Score of the top-1 candidate for every query."""
    _, val = topk(mapped_queries, targets, metric, 1)
    return val[:, 0]


def mutual_nn_pairs(w, source, target, metric, query_limit=None, target_limit=None):
    """Induce a dictionary of mutual nearest neighbors.

    Source rows ``0..query_limit`` are mapped by ``x -> x W^T`` and matched
    against target rows ``0..target_limit`` (all rows by default). A pair
    ``(i, j)`` is kept when ``j`` is the best candidate for ``i`` and ``i``
    is the best query for ``j`` under the same score matrix.

    ``source`` and ``target`` may be EmbeddingSpace objects or row matrices.
    Returns an (p, 2) int array sorted by source index.
    """
    src = getattr(source, "vectors", source)
    tgt = getattr(target, "vectors", target)
    src = _as_rows(src, "source")
    tgt = _as_rows(tgt, "target")
    qn = src.shape[0] if query_limit is None else min(query_limit, src.shape[0])
    tn = tgt.shape[0] if target_limit is None else min(target_limit, tgt.shape[0])
    if qn < 1 or tn < 1:
        raise ValueError("empty query or candidate set")
    mapped = src[:qn] @ np.asarray(w, dtype=np.float64).T
    cand = tgt[:tn]
    cache = None
    if metric.is_csls:
        t = metric.t
        if t > qn or t > tn:
            raise ValueError(f"CSLS T={t} exceeds restricted set sizes ({qn}, {tn})")
        cache = build_neighborhood_cache(mapped, cand, t)
    fwd = np.empty(qn, dtype=np.int64)
    bwd = np.zeros(tn, dtype=np.int64)
    bwd_best = np.full(tn, -np.inf)
    for s in range(0, qn, BLOCK):
        block = mapped[s:s + BLOCK] @ cand.T
        if cache is not None:
            block = 2.0 * block - cache.r_query[s:s + BLOCK, None] - cache.r_target[None, :]
        # argmax returns the first maximal index: lower-index tie rule
        fwd[s:s + BLOCK] = np.argmax(block, axis=1)
        col_arg = np.argmax(block, axis=0)
        col_max = block[col_arg, np.arange(tn)]
        better = col_max > bwd_best
        bwd[better] = col_arg[better] + s
        bwd_best[better] = col_max[better]
    src_idx = np.flatnonzero(bwd[fwd] == np.arange(qn))
    pairs = np.stack([src_idx, fwd[src_idx]], axis=1).astype(np.int64)
    if pairs.shape[0] == 0:
        raise EmptyDictionaryError("no mutual nearest neighbors found")
    return pairs


def hub_count(mapped_queries, targets, threshold, metric=InnerProduct):
    """Number of targets that are the top-1 candidate of more than ``threshold`` queries."""
    idx, _ = topk(mapped_queries, targets, metric, 1)
    counts = np.bincount(idx[:, 0], minlength=_as_rows(targets, "targets").shape[0])
    return int(np.sum(counts > threshold))
