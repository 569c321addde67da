"""Unsupervised word translation by two-way adversarial alignment."""

from .embeddings import (
    EmbeddingSpace,
    SyntheticPair,
    frequency_slice,
    generate_synthetic_pair,
    load_text_embeddings,
    normalize_rows,
    save_text_embeddings,
)
from .numerics import (
    finite_difference_check,
    orthogonality_error,
    orthogonalize_step,
    qr_decompose,
    random_orthogonal,
    svd,
)
from .similarity import (
    CSLS,
    InnerProduct,
    SimilarityMetric,
    build_neighborhood_cache,
    csls_topk,
    hub_count,
    knn_inner_product,
    mutual_nn_pairs,
)
from .procrustes import InducedDictionary, refine, refine_inverse, solve_procrustes
from .adversarial import TrainerConfig, mean_similarity_criterion, train
from .evaluation import (
    TranslationDictionary,
    error_analysis,
    export_vectors,
    load_dictionary,
    precision_at_k,
)

__version__ = "0.1.0"
