"""Cadence: diversity-aware graph collaborative filtering at desk scale.

A LightGCN-style backbone trained with pairwise ranking loss, an item-item
co-interaction graph refinement stage (UACR-weighted, geometrically pruned),
a post-training candidate-selection / counterfactual-exposure re-ranker, and
an empirical lab for the embedding-norm vs. popularity dynamics of SGD.
"""

from cadence.corpus import (
    Dataset,
    DataError,
    InteractionLog,
    build_dataset,
    load_categories,
    load_interactions,
)
from cadence.spgraph import (
    PropagationSpec,
    SparseMatrix,
    build_bipartite_adjacency,
    spectral_radius_estimate,
    spmm,
)
from cadence.embed import (
    EmbeddingTable,
    PropagatedEmbeddings,
    column_slice_M,
    init_embeddings,
    load_embeddings,
    propagate,
    row_slice_M,
    save_embeddings,
    score,
)
from cadence.train import (
    GradientBundle,
    GradientDiagnostics,
    TrainConfig,
    TrainedModel,
    Triplet,
    adam_step,
    bpr_gradients,
    bpr_loss,
    gradient_diagnostics,
    recall_eval_hook,
    sample_triplet,
    sgd_step,
    train,
)
from cadence.cigr import (
    WeightedItemGraph,
    build_copurchase,
    geometric_truncate,
    item_item_aggregate,
    refine_item_embeddings,
    uacr_scores,
)
from cadence.csce import (
    CsceConfig,
    RecommendationList,
    counterfactual_exposure,
    recommend,
    user_candidates,
)
from cadence.metrics import (
    MetricsReport,
    coverage_at_k,
    f_beta,
    recall_at_k,
    wilcoxon_signed_rank,
)
from cadence import normlab

__version__ = "0.1.0"
