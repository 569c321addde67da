"""Orthogonal Procrustes and dictionary-driven refinement.

Maps act on row vectors as ``x -> x W^T`` so that ``W`` reads the same way
as the usual column-vector ``W x``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import svd
from .similarity import EmptyDictionaryError, CSLS, mutual_nn_pairs

logger = logging.getLogger(__name__)

__all__ = [
    "InducedDictionary",
    "solve_procrustes",
    "RefineResult",
    "refine",
    "refine_inverse",
    "save_induced_dictionary",
]


@dataclass(frozen=True)
class InducedDictionary:
    """(source index, target index) pairs sorted by source index."""

    pairs: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return self.pairs.shape[0]

    @property
    def source(self):
        return self.pairs[:, 0]

    @property
    def target(self):
        return self.pairs[:, 1]

    def transposed(self):
        p = self.pairs[:, ::-1]
        return InducedDictionary(p[np.argsort(p[:, 0], kind="stable")])


def solve_procrustes(src_rows, tgt_rows, rtol=1e-12, return_info=False):
    """Orthogonal ``W`` minimizing ``||src_rows W^T - tgt_rows||_F``.

    With ``M = tgt_rows^T src_rows = U S V^T`` the minimizer is ``U V^T``.
    When ``M`` has a (numerically) zero singular value the minimizer is not
    unique; a warning is logged and, with ``return_info``, ``(W, True)`` is
    returned. The matrix is orthogonal either way.
    """
    src_rows = np.atleast_2d(np.asarray(src_rows, dtype=np.float64))
    tgt_rows = np.atleast_2d(np.asarray(tgt_rows, dtype=np.float64))
    if src_rows.shape != tgt_rows.shape:
        raise ValueError(f"shape mismatch {src_rows.shape} vs {tgt_rows.shape}")
    if src_rows.shape[0] < 1:
        raise ValueError("need at least one pair")
    u, s, v = svd(tgt_rows.T @ src_rows)
    w = u @ v.T
    degenerate = bool(s[-1] <= rtol * max(s[0], 1e-300))
    if degenerate:
        logger.warning("Procrustes solution is not unique (rank-deficient cross-covariance)")
    return (w, degenerate) if return_info else w


@dataclass
class RefineResult:
    w: np.ndarray
    dictionary_sizes: list = field(default_factory=list)
    dictionary: InducedDictionary = None
    aborted: bool = False


def _vectors(space):
    return getattr(space, "vectors", space)


def refine(w_init, source, target, metric=CSLS(10), query_limit=10000, iterations=1,
           target_limit=None):
    """Alternate mutual-NN induction and Procrustes ``iterations`` times.

    Returns a :class:`RefineResult`. If a round induces no pairs the
    refinement stops and keeps the last map it had, with ``aborted`` set.
    """
    w = np.asarray(w_init, dtype=np.float64)
    src, tgt = _vectors(source), _vectors(target)
    if w.shape != (src.shape[1], tgt.shape[1]):
        raise ValueError(f"map of shape {w.shape} does not fit dimensions")
    result = RefineResult(w=w)
    for it in range(iterations):
        try:
            pairs = mutual_nn_pairs(w, src, tgt, metric, query_limit, target_limit)
        except EmptyDictionaryError:
            logger.warning("refinement round %d induced no pairs; stopping", it)
            result.aborted = True
            break
        d = InducedDictionary(pairs)
        w = solve_procrustes(src[d.source], tgt[d.target])
        result.dictionary_sizes.append(len(d))
        result.dictionary = d
        result.w = w
        logger.info("refine round %d: %d pairs", it, len(d))
    return result


def refine_inverse(z_init, source, target, metric=CSLS(10), query_limit=10000, iterations=1,
                   target_limit=None, reuse_dictionary=None):
    """Refine the inverse map ``Z`` (target -> source).

    By default a fresh dictionary is induced from target queries against the
    source vocabulary, which is :func:`refine` with roles swapped. Passing
    ``reuse_dictionary`` (a forward :class:`InducedDictionary`) instead
    solves once on its transposed pairs.
    """
    if reuse_dictionary is not None:
        d = reuse_dictionary.transposed()
        src, tgt = _vectors(source), _vectors(target)
        z = solve_procrustes(tgt[d.source], src[d.target])
        return RefineResult(w=z, dictionary_sizes=[len(d)], dictionary=d)
    return refine(z_init, target, source, metric, query_limit, iterations, target_limit)


def save_induced_dictionary(dictionary, source_vocab, target_vocab, path):
    """Write pairs as ``source_token target_token`` lines."""
    with open(path, "w", encoding="utf-8") as f:
        for i, j in dictionary.pairs:
            f.write(f"{source_vocab[i]} {target_vocab[j]}\n")
