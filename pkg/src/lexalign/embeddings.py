"""Embedding spaces: loading, normalization, frequency slicing, synthesis."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import random_orthogonal

logger = logging.getLogger(__name__)

__all__ = [
    "EmbeddingFormatError",
    "EmbeddingSpace",
    "SyntheticPair",
    "load_text_embeddings",
    "save_text_embeddings",
    "normalize_rows",
    "frequency_slice",
    "generate_synthetic_pair",
]


class EmbeddingFormatError(ValueError):
    """Malformed embedding file or invalid vector content."""


@dataclass(frozen=True, eq=False)
class EmbeddingSpace:
    """Frequency-ordered vocabulary with one row vector per token."""

    lang_id: str
    vocab: tuple
    vectors: np.ndarray
    normalized: bool = False
    word2id: dict = field(init=False, repr=False)

    def __post_init__(self):
        vocab = tuple(self.vocab)
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 1:
            raise ValueError(f"vectors must be a nonempty 2-D matrix, got {vectors.shape}")
        if len(vocab) != vectors.shape[0]:
            raise ValueError(f"{len(vocab)} tokens but {vectors.shape[0]} vectors")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("vectors contain non-finite values")
        word2id = {w: i for i, w in enumerate(vocab)}
        if len(word2id) != len(vocab):
            raise ValueError("vocabulary tokens must be unique")
        if self.normalized:
            norms = np.linalg.norm(vectors, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-9:
                raise ValueError("normalized=True but rows are not unit length")
        vectors.setflags(write=False)
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "word2id", word2id)

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.n

    def __contains__(self, token):
        return token in self.word2id

    def index(self, token):
        return self.word2id[token]

    def vector(self, token):
        return self.vectors[self.word2id[token]]


@dataclass(frozen=True, eq=False)
class SyntheticPair:
    source: EmbeddingSpace
    target: EmbeddingSpace
    ground_truth_rotation: np.ndarray
    ground_truth_dictionary: object  # evaluation.TranslationDictionary
    noise_sigma: float
    # target row holding the translation of source row i
    target_index: np.ndarray = None


def load_text_embeddings(path, max_vocab=None, normalize=False, lang_id=None):
    """Read a word2vec-style text file.

    The first line holds ``count dim``; each following line is a token and
    ``dim`` reals. Lines are taken in file order, which is treated as
    descending frequency. Duplicate tokens after the first are skipped.
    """
    if max_vocab is not None and max_vocab < 1:
        raise ValueError("max_vocab must be positive or None")
    words = []
    rows = []
    seen = set()
    n_dup = 0
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise EmbeddingFormatError(f"{path}: bad header {header!r}, expected 'count dim'")
        dim = int(header[1])
        if dim < 1:
            raise EmbeddingFormatError(f"{path}: dimension must be >= 1")
        for lineno, line in enumerate(f, start=2):
            if max_vocab is not None and len(words) >= max_vocab:
                break
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.rstrip(" ").split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim + 1} fields, got {len(parts)}"
                )
            word = parts[0]
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value for {word!r}")
            if word in seen:
                n_dup += 1
                continue
            seen.add(word)
            words.append(word)
            rows.append(vec)
    if not words:
        raise EmbeddingFormatError(f"{path}: no vectors")
    if n_dup:
        logger.warning("%s: skipped %d duplicate tokens", path, n_dup)
    space = EmbeddingSpace(lang_id or "", tuple(words), np.vstack(rows))
    return normalize_rows(space) if normalize else space


def save_text_embeddings(space, path):
    """Write ``space`` in the format read by :func:`load_text_embeddings`."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{space.n} {space.dim}\n")
        for word, vec in zip(space.vocab, space.vectors):
            f.write(word + " " + " ".join(f"{x:.17g}" for x in vec) + "\n")


def normalize_rows(space):
    """Return a copy of ``space`` with unit-L2 rows."""
    norms = np.linalg.norm(space.vectors, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = space.vocab[int(np.flatnonzero(norms[:, 0] == 0.0)[0])]
        raise EmbeddingFormatError(f"cannot normalize zero vector for {bad!r}")
    return EmbeddingSpace(space.lang_id, space.vocab, space.vectors / norms, normalized=True)


def frequency_slice(space, k):
    """Indices of the ``k`` most frequent tokens (clamped to the vocab size)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return range(min(k, space.n))


SYNTH_STREAM = 2


def _cluster_centers(rng, d, n_clusters):
    centers = rng.standard_normal((n_clusters, d))
    # distinct radii keep the cloud free of rotational symmetries
    return centers * rng.uniform(0.5, 2.0, size=(n_clusters, 1))


def generate_synthetic_pair(
    seed,
    n,
    d,
    noise_sigma=0.0,
    shuffle_target=True,
    normalize=True,
    clusters=0,
    cluster_spread=0.5,
):
    """Two embedding spaces related by a hidden rotation.

    Source rows are i.i.d. standard Gaussian; target rows are the rotated
    source rows plus Gaussian noise of standard deviation ``noise_sigma``.
    With ``clusters > 0`` source rows are instead drawn from a Gaussian
    mixture with that many randomly placed components of standard
    deviation ``cluster_spread``. An isotropic cloud looks the same under
    every rotation, so the hidden rotation is only identifiable without
    supervision when the cloud has such structure.
    """
    from .evaluation import TranslationDictionary

    if d < 1 or n < d:
        raise ValueError(f"need n >= d >= 1, got n={n}, d={d}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    # "synth" sub-stream; must not coincide with the trainer's streams
    ss = np.random.SeedSequence(seed, spawn_key=(SYNTH_STREAM,))
    rot_ss, src_ss, noise_ss, perm_ss = ss.spawn(4)
    q = random_orthogonal(d, np.random.default_rng(rot_ss))
    rng = np.random.default_rng(src_ss)
    if clusters > 0:
        centers = _cluster_centers(rng, d, clusters)
        labels = rng.integers(clusters, size=n)
        src = centers[labels] + cluster_spread * rng.standard_normal((n, d))
    else:
        src = rng.standard_normal((n, d))
    if normalize:
        src = src / np.linalg.norm(src, axis=1, keepdims=True)
    tgt = src @ q.T
    if noise_sigma > 0:
        tgt = tgt + noise_sigma * np.random.default_rng(noise_ss).standard_normal((n, d))
    if normalize:
        tgt = tgt / np.linalg.norm(tgt, axis=1, keepdims=True)

    width = max(3, len(str(n - 1)))
    src_vocab = tuple(f"s{i:0{width}d}" for i in range(n))
    tgt_vocab = tuple(f"t{i:0{width}d}" for i in range(n))
    if shuffle_target:
        perm = np.random.default_rng(perm_ss).permutation(n)
    else:
        perm = np.arange(n)
    # row r of the shuffled target holds the translation of source perm[r]
    target_index = np.empty(n, dtype=np.int64)
    target_index[perm] = np.arange(n)
    tgt = tgt[perm]
    tgt_vocab = tuple(tgt_vocab[p] for p in perm)

    dictionary = TranslationDictionary(
        {src_vocab[i]: frozenset([tgt_vocab[target_index[i]]]) for i in range(n)}
    )
    return SyntheticPair(
        source=EmbeddingSpace("src", src_vocab, src, normalized=normalize),
        target=EmbeddingSpace("tgt", tgt_vocab, tgt, normalized=normalize),
        ground_truth_rotation=q,
        ground_truth_dictionary=dictionary,
        noise_sigma=float(noise_sigma),
        target_index=target_index,
    )
