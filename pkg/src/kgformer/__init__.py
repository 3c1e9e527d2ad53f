"""Knowledge-graph completion toolkit: degree-weighted subgraph sampling, a
graph transformer with joint distance/distinction attention bias, a
subgraph-based multi-classification objective with adaptive negative
weighting, and prompt-embedding fusion."""

from .kg import (
    KnowledgeGraph,
    TextCatalog,
    Triple,
    Vocabulary,
    add_inverse_relations,
    load_snapshot,
    load_triples,
    save_snapshot,
)
from .sampling import SamplerConfig, Subgraph, extract_subgraph
from .positions import (
    UNREACHABLE,
    BucketMap,
    bucketize,
    build_distance_matrix,
    build_distinction_matrix,
    distance_buckets,
    distinction_buckets,
)
from .pooling import PoolingOperator
from .encoder import EncoderConfig, GraphEncoder, attention_with_bias
from .objective import (
    ClassifierHead,
    LossBreakdown,
    adaptive_beta2,
    classify,
    loss_ce,
    pool_triple_repr,
    subgraph_loss,
    total_loss,
)
from .fusion import (
    CacheEmbeddingProvider,
    EmbeddingCache,
    FusionConfig,
    StubPromptModel,
    concat_classifier_input,
    fuse_entity,
    fuse_relation,
    pool_relation_context,
    read_embedding_cache,
    write_embedding_cache,
)
from .model import CompletionModel
from .evaluation import (
    Diagnostics,
    build_filter_index,
    collect_diagnostics,
    evaluate,
    hits_at_k,
    mrr,
    rank_candidates,
)
from .training import TrainConfig, load_checkpoint, lr_at, save_checkpoint, train
from .config import RunSettings

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
