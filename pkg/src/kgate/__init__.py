"""kgate: generator-agnostic knowledge pre-selection.

Unifies document and triple knowledge bases into one graph of process
and knowledge nodes, learns to traverse it and score candidate knowledge
for a dialogue turn, and returns an adaptively sized knowledge pool for
any downstream response generator.
"""

from .corpus import (
    DialogueSample,
    DocumentKB,
    SynthConfig,
    TripleKB,
    gen_synthetic,
    parse_dialogue_corpus,
    parse_document_kb,
    parse_triple_kb,
)
from .encode import (
    Embedding,
    EmbeddingProvider,
    FileBackedProvider,
    HashedBowProvider,
    KeywordSet,
    embed_text,
    encode_node,
    extract_keywords,
    graph_idf,
)
from .errors import (
    GraphError,
    KgateError,
    ParseError,
    ProviderError,
    SelectionError,
    ShapeError,
    ValidationError,
)
from .evaluate import EvalReport, baseline_random, baseline_semantic, recall_at_k, run_eval
from .graph import (
    UnifiedGraph,
    load_graph,
    neighbors,
    save_graph,
    unify_documents,
    unify_triples,
    validate,
    verify_corpus,
)
from .layers import Dims, ModelParams, grad_check, init_params, load_params, save_params
from .prompts import render_prompt
from .selector import SelectionResult, SelectorConfig, select
from .service import RuntimeBundle, SelectionService, make_server, serve
from .training import (
    RewardConfig,
    TrainConfig,
    TrainReport,
    reinforce_loss,
    reward_gold,
    reward_node,
    reward_pool,
    rollout,
    train,
)

__version__ = "0.1.0"
