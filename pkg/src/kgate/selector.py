"""Knowledge selection pipeline.

A selection run encodes the dialogue context, refreshes the graph
encodings with one attention pass, walks the process graph under the
scoring policy (greedy at inference, sampled during training), scores
the knowledge reachable from the halt node, and cuts an adaptively
sized pool from the ranking.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import DialogueSample
from .encode import EmbeddingProvider, KeywordSet, encode_knowledge, encode_node, extract_keywords
from .errors import NumericalError, SelectionError, ValidationError
from .graph import UnifiedGraph
from .layers import ModelParams, gat_forward, mha_forward, mlp_forward

DEFAULT_KEYWORDS = 8


@dataclass(frozen=True)
class SelectorConfig:
    """Traversal and pool policy knobs.

    ``pool_mode`` is "adaptive" (variance-driven cut) or "fixed"
    (top ``fixed_k``, the fixed-size comparison mode). ``traversal`` is
    "greedy" or "sampled".
    """

    t_max: int = 3
    pool_mode: str = "adaptive"
    fixed_k: int = 10
    m_min: float = 0.05
    traversal: str = "greedy"
    use_node_attention: bool = True
    n_keywords: int = DEFAULT_KEYWORDS

    def __post_init__(self):
        if self.t_max < 1:
            raise ValidationError(f"t_max must be >= 1, got {self.t_max}")
        if self.pool_mode not in ("adaptive", "fixed"):
            raise ValidationError(f"unknown pool mode {self.pool_mode!r}")
        if self.pool_mode == "fixed" and self.fixed_k < 1:
            raise ValidationError(f"fixed_k must be >= 1, got {self.fixed_k}")
        if not 0.0 < self.m_min <= 1.0:
            raise ValidationError(f"m_min must be in (0, 1], got {self.m_min}")
        if self.traversal not in ("greedy", "sampled"):
            raise ValidationError(f"unknown traversal mode {self.traversal!r}")


@dataclass
class ContextEncoding:
    vector: Tensor  # d_state
    history_summary: np.ndarray
    utterance_summary: np.ndarray
    keyword_summary: np.ndarray
    keywords: KeywordSet
    modality_weights: np.ndarray  # (heads, 3)


@dataclass
class GraphEncodings:
    """Per-node vectors for one (graph, params) pair.

    Process rows come out of the whole-graph attention refresh; knowledge
    rows are the static embeddings pushed through the learned knowledge
    projection, keeping the ranking anchored to text similarity.
    """

    process_matrix: Tensor  # (n_process, d_state), attention-refreshed
    knowledge_matrix: Tensor  # (n_knowledge, d_state), projected static
    process_static_matrix: Tensor  # (n_process, d_state), projected static
    process_index: dict[str, int]
    knowledge_index: dict[str, int]

    def process(self, node_id: str) -> Tensor:
        i = self.process_index[node_id]
        return ad.reshape(ad.gather_rows(self.process_matrix, [i]), (self.process_matrix.data.shape[1],))

    def knowledge(self, knowledge_id: str) -> Tensor:
        i = self.knowledge_index[knowledge_id]
        return ad.reshape(ad.gather_rows(self.knowledge_matrix, [i]), (self.knowledge_matrix.data.shape[1],))


@dataclass
class StepRecord:
    node: str
    action: str
    logp: float
    candidates: tuple[str, ...]


@dataclass
class TraversalTrace:
    steps: list[StepRecord]
    halt_node: str
    rewards: "object | None" = None  # RewardBreakdown, attached by training


@dataclass
class EpisodeStep:
    node: str
    candidates: list[str]
    probs: Tensor  # softmax over candidates
    action_index: int
    logp: Tensor


@dataclass
class Episode:
    """Full tensor-level record of one selection run."""

    context: ContextEncoding
    start_node: str
    steps: list[EpisodeStep]
    halt_node: str
    final_candidates: list[str]
    final_node_probs: Tensor
    knowledge_ids: list[str]
    knowledge_scores: Tensor
    ranked: list[tuple[str, float]]
    pool_size: int
    variance: float

    def trace(self) -> TraversalTrace:
        return TraversalTrace(
            steps=[
                StepRecord(
                    node=s.node,
                    action=s.candidates[s.action_index],
                    logp=float(s.logp.data),
                    candidates=tuple(s.candidates),
                )
                for s in self.steps
            ],
            halt_node=self.halt_node,
        )


@dataclass
class SelectionResult:
    ranked_pool: list[tuple[str, float]]
    pool_size: int
    candidates: int
    halt_node: str
    trace: TraversalTrace
    node_score_variance: float

    def pool(self) -> list[tuple[str, float]]:
        """The adaptive cut: top ``pool_size`` of the ranking."""
        return self.ranked_pool[: self.pool_size]

    def to_json(self, graph: UnifiedGraph) -> str:
        payload = {
            "pool": [
                {"id": kid, "text": graph.knowledge_node(kid).text, "score": score}
                for kid, score in self.ranked_pool
            ],
            "pool_size": self.pool_size,
            "candidates": self.candidates,
            "halt_node": self.halt_node,
            "variance": self.node_score_variance,
            "trace": [
                {"node": s.node, "chosen": s.action, "logp": s.logp} for s in self.trace.steps
            ],
        }
        return json.dumps(payload, ensure_ascii=False)


# Whole-graph refresh results and context encodings are cached per
# (inputs, params version, grad mode); entries hold strong references so
# id() reuse after garbage collection can never alias a stale hit.
_STATIC_CACHE: list[tuple[object, object, np.ndarray, np.ndarray, list, dict, dict]] = []
_REFRESH_CACHE: list[tuple[object, object, object, int, bool, GraphEncodings]] = []
_CONTEXT_CACHE: list[tuple] = []
_CACHE_LIMIT = 4
_CONTEXT_CACHE_LIMIT = 16
REFRESH_COMPUTE_COUNT = 0


def clear_caches() -> None:
    _STATIC_CACHE.clear()
    _REFRESH_CACHE.clear()
    _CONTEXT_CACHE.clear()


def _identity_bridge(d_in: int, d_state: int) -> np.ndarray:
    out = np.zeros((d_in, d_state))
    for j in range(min(d_in, d_state)):
        out[j, j] = 1.0
    return out


def _knowledge_bridge(features: np.ndarray, params: ModelParams) -> Tensor:
    """Static embeddings into state space: gated identity plus projection."""
    x = Tensor(features.astype(params.dtype))
    identity = Tensor(_identity_bridge(params.dims.d_in, params.dims.d_state).astype(params.dtype))
    bypass = ad.mul(ad.matmul(x, identity), params["know_gate.a"])
    return ad.add(bypass, ad.matmul(x, params["know_proj.W"]))


def _static_features(graph: UnifiedGraph, provider: EmbeddingProvider):
    for entry in _STATIC_CACHE:
        if entry[0] is graph and entry[1] is provider:
            return entry[2], entry[3], entry[4], entry[5], entry[6]
    process_ids = [n.id for n in graph.process_nodes]
    knowledge_ids = [k.id for k in graph.knowledge_nodes]
    process_index = {nid: i for i, nid in enumerate(process_ids)}
    knowledge_index = {kid: i for i, kid in enumerate(knowledge_ids)}
    process_rows = [encode_node(graph, provider, nid).values for nid in process_ids]
    process_features = np.stack(process_rows) if process_rows else np.zeros((0, provider.dim))
    knowledge_rows = [encode_knowledge(graph, provider, kid).values for kid in knowledge_ids]
    knowledge_features = np.stack(knowledge_rows) if knowledge_rows else np.zeros((0, provider.dim))
    edges = [(process_index[a], process_index[b]) for a, b, _ in graph.edges]
    _STATIC_CACHE.append(
        (graph, provider, process_features, knowledge_features, edges, process_index, knowledge_index)
    )
    del _STATIC_CACHE[:-_CACHE_LIMIT]
    return process_features, knowledge_features, edges, process_index, knowledge_index


def refresh_graph(
    graph: UnifiedGraph,
    provider: EmbeddingProvider,
    params: ModelParams,
    use_cache: bool = True,
) -> GraphEncodings:
    """Refresh all node encodings for one (graph, params) pair.

    Process nodes get one attention pass over the process edges; knowledge
    embeddings pass through the learned projection into state space.
    """
    global REFRESH_COMPUTE_COUNT
    grad_mode = ad.grad_enabled()
    if use_cache:
        for entry in _REFRESH_CACHE:
            if (
                entry[0] is graph
                and entry[1] is provider
                and entry[2] is params
                and entry[3] == params.version
                and entry[4] == grad_mode
            ):
                return entry[5]
    process_features, knowledge_features, edges, process_index, knowledge_index = _static_features(
        graph, provider
    )
    if process_features.shape[1] != params.dims.d_in:
        raise ValidationError(
            f"provider dimension {process_features.shape[1]} does not match model d_in {params.dims.d_in}"
        )
    process_matrix = gat_forward(Tensor(process_features.astype(params.dtype)), edges, params, "graph_gat")
    knowledge_matrix = _knowledge_bridge(knowledge_features, params)
    process_static_matrix = _knowledge_bridge(process_features, params)
    REFRESH_COMPUTE_COUNT += 1
    encodings = GraphEncodings(
        process_matrix=process_matrix,
        knowledge_matrix=knowledge_matrix,
        process_static_matrix=process_static_matrix,
        process_index=process_index,
        knowledge_index=knowledge_index,
    )
    if use_cache:
        _REFRESH_CACHE.append((graph, provider, params, params.version, grad_mode, encodings))
        del _REFRESH_CACHE[:-_CACHE_LIMIT]
    return encodings


def encode_context(
    history: Sequence[str],
    utterance: str,
    provider: EmbeddingProvider,
    params: ModelParams,
    idf: Mapping[str, float] | None = None,
    n_keywords: int = DEFAULT_KEYWORDS,
) -> ContextEncoding:
    """Fuse history, current utterance, and extracted keywords into one vector.

    Each modality is summarized independently (mean of turn embeddings,
    the utterance embedding, weight-weighted mean of keyword embeddings);
    attention queried by the utterance summary merges the three.
    """
    if not utterance or not utterance.strip():
        raise ValidationError("utterance must be non-empty")
    dim = provider.dim
    turn_vectors = [provider.embed_text(t).values for t in history]
    history_summary = np.mean(turn_vectors, axis=0) if turn_vectors else np.zeros(dim)
    utterance_summary = provider.embed_text(utterance).values
    keywords = extract_keywords(history, utterance, n_keywords, idf=idf)
    if keywords.keywords:
        weights = np.array([w for _, w in keywords.keywords])
        vectors = np.stack([provider.embed_text(term).values for term, _ in keywords.keywords])
        keyword_summary = (weights[:, None] * vectors).sum(axis=0) / weights.sum()
    else:
        keyword_summary = np.zeros(dim)
    dtype = params.dtype
    att = mha_forward(
        Tensor(utterance_summary.astype(dtype)),
        [
            Tensor(history_summary.astype(dtype)),
            Tensor(utterance_summary.astype(dtype)),
            Tensor(keyword_summary.astype(dtype)),
        ],
        params,
        "modality_attn",
    )
    return ContextEncoding(
        vector=att.vector,
        history_summary=history_summary,
        utterance_summary=utterance_summary,
        keyword_summary=keyword_summary,
        keywords=keywords,
        modality_weights=att.weights,
    )


def update_state(state: Tensor, context_vector: Tensor, node_encoding: Tensor, params: ModelParams) -> Tensor:
    """Next agent state: attention of the previous state over context, itself, and the node."""
    return mha_forward(state, [context_vector, state, node_encoding], params, "state_attn").vector


def adjacency(graph: UnifiedGraph, node_id: str) -> list[str]:
    """Action space at a node: itself (halt) plus one-hop neighbors, id-sorted."""
    return sorted(set(graph.neighbors(node_id)) | {node_id})


def score_subgraph(
    state: Tensor,
    graph: UnifiedGraph,
    node_id: str,
    encodings: GraphEncodings,
    params: ModelParams,
) -> tuple[list[str], Tensor]:
    """Score each candidate next node; returns softmax-normalized scores.

    Candidate features pair the agent state with each node's encoding and
    run one attention pass over the star around the current node, then the
    scalar score head.
    """
    candidates = adjacency(graph, node_id)
    center = candidates.index(node_id)
    feats = ad.stack([ad.concat([state, encodings.process(nid)]) for nid in candidates])
    star_edges = [(center, i) for i in range(len(candidates)) if i != center]
    hidden = gat_forward(feats, star_edges, params, "score_gat")
    raw = ad.reshape(mlp_forward(hidden, params, "score_head"), (len(candidates),))
    return candidates, ad.softmax(raw)


def score_knowledge(
    state: Tensor,
    candidates: Sequence[str],
    node_probs: Tensor,
    graph: UnifiedGraph,
    encodings: GraphEncodings,
    params: ModelParams,
    use_node_attention: bool = True,
) -> tuple[list[str], Tensor]:
    """Score all knowledge owned by the candidate nodes.

    Node attention turns the node score distribution into per-owner
    weights that scale each item's state-knowledge dot product; with the
    toggle off the dot product alone ranks the pool.
    """
    knowledge_ids: list[str] = []
    owner_pos: list[int] = []
    for pos, nid in enumerate(candidates):
        for kid in graph.owned_knowledge(nid):
            knowledge_ids.append(kid)
            owner_pos.append(pos)
    if not knowledge_ids:
        raise SelectionError("no candidate knowledge reachable from the halt node")
    rows = [encodings.knowledge_index[kid] for kid in knowledge_ids]
    k_matrix = ad.gather_rows(encodings.knowledge_matrix, rows)
    dots = ad.mul(ad.matmul(k_matrix, state), params["know_scale.g"])
    if not use_node_attention:
        return knowledge_ids, dots
    raw_w = ad.reshape(
        mlp_forward(ad.reshape(node_probs, (len(candidates), 1)), params, "node_attn"),
        (len(candidates),),
    )
    weights = ad.softmax(raw_w)
    per_item = ad.gather_rows(weights, owner_pos)
    return knowledge_ids, ad.mul(per_item, dots)


def pool_fraction(variance: float, m_min: float) -> float:
    """Map node-score variance to the kept fraction of the candidate pool.

    Softmax scores have variance in [0, 1/4], so 1/(1 - v) lies in
    [1, 4/3]; an affine map sends uncertainty (v=0) to 1 and peak
    confidence to m_min, clamped to [m_min, 1].
    """
    x = 1.0 / (1.0 - variance)
    frac = m_min + (1.0 - m_min) * ((4.0 / 3.0 - x) / (1.0 / 3.0))
    return min(1.0, max(m_min, frac))


def adapt_pool(node_probs: np.ndarray, n_candidates: int, config: SelectorConfig) -> tuple[int, float]:
    """Pool size from the node score distribution; returns (size, variance)."""
    variance = float(np.var(node_probs))
    if config.pool_mode == "fixed":
        return min(config.fixed_k, n_candidates), variance
    frac = pool_fraction(variance, config.m_min)
    size = int(np.floor(n_candidates * frac + 0.5))
    return max(1, min(size, n_candidates)), variance


def resolve_start(
    graph: UnifiedGraph,
    start_node: str | None,
    context_vector: Tensor,
    encodings: GraphEncodings,
) -> str:
    """Corpus-provided start when available, else the process node whose
    content encoding best matches the fused context."""
    if start_node is not None:
        graph.process_node(start_node)
        return start_node
    if not graph.process_nodes:
        raise SelectionError("graph has no process nodes")
    best_id, best_score = None, -np.inf
    x = context_vector.data
    for nid in sorted(encodings.process_index):
        score = float(encodings.process_static_matrix.data[encodings.process_index[nid]] @ x)
        if score > best_score:
            best_id, best_score = nid, score
    return best_id


def _cached_context(
    history: Sequence[str],
    utterance: str,
    provider: EmbeddingProvider,
    params: ModelParams,
    idf: Mapping[str, float] | None,
    n_keywords: int,
) -> ContextEncoding:
    grad_mode = ad.grad_enabled()
    key = (tuple(history), utterance, n_keywords, params.version, grad_mode)
    for entry in _CONTEXT_CACHE:
        if (
            entry[0] == key
            and entry[1] is provider
            and entry[2] is params
            and entry[3] is idf
        ):
            return entry[4]
    context = encode_context(history, utterance, provider, params, idf=idf, n_keywords=n_keywords)
    _CONTEXT_CACHE.append((key, provider, params, idf, context))
    del _CONTEXT_CACHE[:-_CONTEXT_CACHE_LIMIT]
    return context


def run_episode(
    graph: UnifiedGraph,
    history: Sequence[str],
    utterance: str,
    provider: EmbeddingProvider,
    params: ModelParams,
    config: SelectorConfig,
    rng: np.random.Generator | None = None,
    start_node: str | None = None,
    idf: Mapping[str, float] | None = None,
) -> Episode:
    """Run the full pipeline once; sampling requires an rng."""
    if config.traversal == "sampled" and rng is None:
        raise ValidationError("sampled traversal needs an rng")
    context = _cached_context(history, utterance, provider, params, idf, config.n_keywords)
    encodings = refresh_graph(graph, provider, params)
    current = resolve_start(graph, start_node, context.vector, encodings)
    state = context.vector
    steps: list[EpisodeStep] = []
    final: tuple[list[str], Tensor] | None = None
    for _t in range(config.t_max):
        candidates, probs = score_subgraph(state, graph, current, encodings, params)
        if not np.all(np.isfinite(probs.data)):
            raise NumericalError("non-finite node scores; the model may have diverged")
        if len(candidates) == 1:
            final = (candidates, probs)
            break
        if config.traversal == "greedy":
            action_index = int(np.argmax(probs.data))
        else:
            p = probs.data / probs.data.sum()
            action_index = int(rng.choice(len(candidates), p=p))
        logp = ad.log(ad.index(probs, action_index))
        steps.append(
            EpisodeStep(node=current, candidates=candidates, probs=probs, action_index=action_index, logp=logp)
        )
        chosen = candidates[action_index]
        if chosen == current:
            final = (candidates, probs)
            break
        current = chosen
        state = update_state(state, context.vector, encodings.process(current), params)
        final = None
    if final is None:
        final = score_subgraph(state, graph, current, encodings, params)
    final_candidates, final_probs = final
    knowledge_ids, knowledge_scores = score_knowledge(
        state, final_candidates, final_probs, graph, encodings, params, config.use_node_attention
    )
    ranked = sorted(
        ((kid, float(s)) for kid, s in zip(knowledge_ids, knowledge_scores.data)),
        key=lambda item: (-item[1], item[0]),
    )
    pool_size, variance = adapt_pool(final_probs.data, len(knowledge_ids), config)
    return Episode(
        context=context,
        start_node=steps[0].node if steps else current,
        steps=steps,
        halt_node=current,
        final_candidates=final_candidates,
        final_node_probs=final_probs,
        knowledge_ids=knowledge_ids,
        knowledge_scores=knowledge_scores,
        ranked=ranked,
        pool_size=pool_size,
        variance=variance,
    )


def select(
    graph: UnifiedGraph,
    dialogue: DialogueSample,
    provider: EmbeddingProvider,
    params: ModelParams,
    config: SelectorConfig | None = None,
    idf: Mapping[str, float] | None = None,
) -> SelectionResult:
    """Greedy, deterministic selection for one dialogue turn."""
    config = config or SelectorConfig()
    if config.traversal != "greedy":
        config = dataclasses.replace(config, traversal="greedy")
    with ad.no_grad():
        episode = run_episode(
            graph,
            dialogue.history,
            dialogue.utterance,
            provider,
            params,
            config,
            start_node=dialogue.start_node,
            idf=idf,
        )
    return SelectionResult(
        ranked_pool=episode.ranked,
        pool_size=episode.pool_size,
        candidates=len(episode.knowledge_ids),
        halt_node=episode.halt_node,
        trace=episode.trace(),
        node_score_variance=episode.variance,
    )
