"""Scoring translations against bilingual dictionaries."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .similarity import CSLS, NeighborhoodCache, build_neighborhood_cache, topk

logger = logging.getLogger(__name__)

__all__ = [
    "DictionaryFormatError",
    "TranslationDictionary",
    "ErrorRecord",
    "EvalReport",
    "load_dictionary",
    "save_dictionary",
    "translate",
    "precision_at_k",
    "error_analysis",
    "export_vectors",
    "read_exported_vectors",
    "format_report",
    "write_report_csv",
]

RANK_DEPTH = 100


class DictionaryFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TranslationDictionary:
    """Source token -> frozenset of acceptable target tokens."""

    entries: dict

    def __post_init__(self):
        if not self.entries:
            raise DictionaryFormatError("dictionary is empty")
        for src, tgts in self.entries.items():
            if not src or not tgts or not all(tgts):
                raise DictionaryFormatError(f"bad entry for {src!r}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, src):
        return self.entries[src]

    def items(self):
        return self.entries.items()

    def inverted(self):
        inv = {}
        for src, tgts in self.entries.items():
            for t in tgts:
                inv.setdefault(t, set()).add(src)
        return TranslationDictionary({k: frozenset(v) for k, v in inv.items()})


def load_dictionary(path):
    """Read ``source target`` pairs, one per line.

    Repeated source tokens accumulate. Blank or malformed lines are skipped
    and counted in a warning. Source order follows first appearance.
    """
    acc = {}
    skipped = 0
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if len(parts) != 2:
                skipped += 1
                continue
            acc.setdefault(parts[0], set()).add(parts[1])
    if skipped:
        logger.warning("%s: skipped %d blank or malformed lines", path, skipped)
    if not acc:
        raise DictionaryFormatError(f"{path}: no dictionary entries")
    return TranslationDictionary({k: frozenset(v) for k, v in acc.items()})


def save_dictionary(dictionary, path):
    with open(path, "w", encoding="utf-8") as f:
        for src, tgts in dictionary.items():
            for t in sorted(tgts):
                f.write(f"{src} {t}\n")


@dataclass
class ErrorRecord:
    source: str
    predicted: str
    acceptable: frozenset
    rank: int = None  # 1-based; None when beyond the search depth


@dataclass
class EvalReport:
    coverage: float
    n_covered: int
    p_at: dict
    errors: list = field(default_factory=list)
    metric: str = ""
    rank_depth: int = RANK_DEPTH


def translate(w, source, target, queries, metric=CSLS(10), k=1, neighborhood_queries=None):
    """Top-``k`` target rows for the source rows ``queries``.

    ``source``/``target`` are EmbeddingSpace objects; ``w`` maps source
    rows by ``x -> x W^T``. CSLS neighborhoods are computed against the
    whole mapped source vocabulary unless ``neighborhood_queries`` (row
    indices) says otherwise.
    """
    w = np.asarray(w)
    queries = np.asarray(queries, dtype=np.int64)
    if neighborhood_queries is None:
        pool_ids = np.arange(source.n)
    else:
        pool_ids = np.asarray(neighborhood_queries, dtype=np.int64)
    pool_ids = np.union1d(pool_ids, queries)
    pool = source.vectors[pool_ids] @ w.T
    mapped = pool[np.searchsorted(pool_ids, queries)]
    cache = None
    if metric.is_csls:
        t = min(metric.t, pool.shape[0], target.n)
        full = build_neighborhood_cache(pool, target.vectors, t)
        cache = NeighborhoodCache(full.r_query[np.searchsorted(pool_ids, queries)],
                                  full.r_target, t)
        metric = CSLS(t)
    return topk(mapped, target.vectors, metric, k, cache=cache)


def precision_at_k(w, source, target, dictionary, metric=CSLS(10), ks=(1, 5, 10),
                   rank_depth=RANK_DEPTH):
    """P@k in percent over dictionary words present in both vocabularies.

    A word counts as correct at ``k`` if any acceptable translation is among
    its top ``k`` candidates. ``w`` maps ``source`` into ``target``; for the
    reverse direction pass the inverse map, the swapped spaces and
    ``dictionary.inverted()``.
    """
    ks = sorted(set(int(k) for k in ks))
    covered = []
    for src_tok, tgts in dictionary.items():
        if src_tok not in source:
            continue
        ids = [target.index(t) for t in tgts if t in target]
        if ids:
            covered.append((src_tok, tgts, set(ids)))
    n_total = len(dictionary)
    if not covered:
        raise ValueError("no dictionary word is covered by both vocabularies")
    depth = min(max(max(ks), rank_depth), target.n)
    queries = [source.index(s) for s, _, _ in covered]
    idx, _ = translate(w, source, target, queries, metric, k=depth)
    hits = {k: 0 for k in ks}
    errors = []
    for row, (src_tok, tgts, ids) in zip(idx, covered):
        rank = None
        for r, j in enumerate(row, start=1):
            if j in ids:
                rank = r
                break
        for k in ks:
            if rank is not None and rank <= k:
                hits[k] += 1
        if rank != 1:
            errors.append(ErrorRecord(src_tok, target.vocab[row[0]], frozenset(tgts), rank))
    n = len(covered)
    return EvalReport(
        coverage=n / n_total,
        n_covered=n,
        p_at={k: 100.0 * hits[k] / n for k in ks},
        errors=errors,
        metric=str(metric),
        rank_depth=depth,
    )


def error_analysis(report, limit=8):
    """The first ``limit`` misses, each with the rank of its best acceptable translation."""
    return report.errors[:limit]


def format_report(report, title=""):
    lines = []
    if title:
        lines.append(title)
    lines.append(f"metric    {report.metric}")
    lines.append(f"coverage  {100.0 * report.coverage:.2f}% ({report.n_covered} words)")
    for k, v in report.p_at.items():
        lines.append(f"P@{k:<7d} {v:.2f}")
    return "\n".join(lines)


def write_report_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "coverage", "n_covered"] + [f"p@{k}" for k in report.p_at])
        writer.writerow([report.metric, repr(report.coverage), report.n_covered]
                        + [repr(v) for v in report.p_at.values()])


def export_vectors(path, spaces, maps, words=None):
    """Write original and mapped coordinates for plotting.

    ``spaces`` and ``maps`` are parallel sequences; a ``None`` map leaves
    vectors unchanged. ``words`` is an optional parallel sequence of token
    lists (default: whole vocabulary). Columns: token, lang, x0..x{d-1},
    m0..m{d-1}. Returns the number of rows written.
    """
    if len(spaces) != len(maps):
        raise ValueError("need one map (or None) per space")
    if words is None:
        words = [None] * len(spaces)
    d = spaces[0].dim
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["token", "lang"] + [f"x{i}" for i in range(d)] + [f"m{i}" for i in range(d)])
        for space, m, toks in zip(spaces, maps, words):
            if space.dim != d:
                raise ValueError("all spaces must share a dimension")
            m = np.eye(d) if m is None else np.asarray(m)
            if m.shape != (d, d):
                raise ValueError(f"map shape {m.shape} does not match dimension {d}")
            ids = range(space.n) if toks is None else [space.index(t) for t in toks]
            for i in ids:
                x = space.vectors[i]
                writer.writerow([space.vocab[i], space.lang_id]
                                + [f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in m @ x])
                rows += 1
    return rows


def read_exported_vectors(path):
    """Inverse of :func:`export_vectors`: (tokens, langs, original, mapped)."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        d = (len(header) - 2) // 2
        toks, langs, orig, mapped = [], [], [], []
        for row in reader:
            toks.append(row[0])
            langs.append(row[1])
            vals = np.array(row[2:], dtype=np.float64)
            orig.append(vals[:d])
            mapped.append(vals[d:])
    return toks, langs, np.array(orig).reshape(-1, d), np.array(mapped).reshape(-1, d)
