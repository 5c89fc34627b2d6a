"""Recall@k evaluation of the selector against trivial baselines.

Recall@k is computed over the full ranking, not the adaptive cut, so
ranking quality and pool-size policy stay independently measurable. The
random baseline shuffles the candidates an untrained uniform walk can
reach; the semantic baseline ranks by dot product between the mean
dialogue embedding and each knowledge embedding.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import DialogueSample
from .encode import EmbeddingProvider
from .errors import ValidationError
from .graph import UnifiedGraph
from .layers import ModelParams
from .selector import SelectionResult, SelectorConfig, adjacency, select

DEFAULT_KS = (1, 5, 10)


def _rank_list(result) -> list[str]:
    if isinstance(result, SelectionResult):
        return [kid for kid, _ in result.ranked_pool]
    return list(result)


def recall_at_k(
    results: Mapping[str, object],
    golds: Mapping[str, Sequence[str]],
    ks: Sequence[int] = DEFAULT_KS,
) -> dict[int, float]:
    """Fraction of samples whose gold appears in the top-k of the ranking."""
    if set(results) != set(golds):
        missing = set(results) ^ set(golds)
        raise ValidationError(f"results and golds disagree on sample ids: {sorted(missing)[:5]}")
    if not results:
        raise ValidationError("no samples to evaluate")
    out: dict[int, float] = {}
    for k in ks:
        hits = 0
        for sid, result in results.items():
            ranking = _rank_list(result)
            top = ranking[: min(k, len(ranking))]
            if set(top) & set(golds[sid]):
                hits += 1
        out[k] = hits / len(results)
    return out


def uniform_walk_candidates(
    graph: UnifiedGraph,
    sample: DialogueSample,
    rng: np.random.Generator,
    t_max: int = 3,
) -> list[str]:
    """Candidate knowledge reachable by an untrained uniform walk."""
    if sample.start_node is not None:
        current = sample.start_node
    else:
        nodes = sorted(n.id for n in graph.process_nodes)
        current = nodes[rng.integers(len(nodes))]
    for _ in range(t_max):
        options = adjacency(graph, current)
        if len(options) == 1:
            break
        chosen = options[int(rng.integers(len(options)))]
        if chosen == current:
            break
        current = chosen
    candidates: list[str] = []
    for nid in adjacency(graph, current):
        candidates.extend(graph.owned_knowledge(nid))
    return candidates


def baseline_random(
    graph: UnifiedGraph,
    samples: Sequence[DialogueSample],
    seed: int,
    ks: Sequence[int] = DEFAULT_KS,
    t_max: int = 3,
) -> dict[int, float]:
    """Uniformly shuffled candidates from a seeded uniform walk per sample."""
    rng = np.random.default_rng(seed)
    rankings: dict[str, list[str]] = {}
    for sample in samples:
        candidates = uniform_walk_candidates(graph, sample, rng, t_max=t_max)
        order = rng.permutation(len(candidates))
        rankings[sample.id] = [candidates[i] for i in order]
    return recall_at_k(rankings, {s.id: s.gold_knowledge for s in samples}, ks)


def semantic_candidates(graph: UnifiedGraph, sample: DialogueSample) -> list[str]:
    """Deterministic candidate scope for the similarity baseline.

    The adjacency of the corpus-provided start node when present (halting
    in place), otherwise every knowledge node in the graph.
    """
    if sample.start_node is not None:
        candidates: list[str] = []
        for nid in adjacency(graph, sample.start_node):
            candidates.extend(graph.owned_knowledge(nid))
        if candidates:
            return candidates
    return [k.id for k in graph.knowledge_nodes]


def baseline_semantic(
    graph: UnifiedGraph,
    samples: Sequence[DialogueSample],
    provider: EmbeddingProvider,
    ks: Sequence[int] = DEFAULT_KS,
) -> dict[int, float]:
    """Rank candidates by similarity between the mean dialogue embedding and each item."""
    rankings: dict[str, list[str]] = {}
    for sample in samples:
        turns = list(sample.history) + [sample.utterance]
        vectors = [provider.embed_text(t).values for t in turns]
        query = np.mean(vectors, axis=0)
        scored = []
        for kid in semantic_candidates(graph, sample):
            emb = provider.embed_id(kid, fallback_text=graph.knowledge_node(kid).text)
            scored.append((kid, float(emb.values @ query)))
        scored.sort(key=lambda item: (-item[1], item[0]))
        rankings[sample.id] = [kid for kid, _ in scored]
    return recall_at_k(rankings, {s.id: s.gold_knowledge for s in samples}, ks)


@dataclass
class MethodReport:
    mean: dict[int, float]
    std: dict[int, float]
    per_seed: dict[int, list[float]]


@dataclass
class EvalReport:
    seeds: list[int]
    n_samples: int
    methods: dict[str, MethodReport]
    mean_pool_size: float
    gold_in_pool_rate: float

    def to_json(self) -> str:
        payload = {
            "seeds": self.seeds,
            "n_samples": self.n_samples,
            "mean_pool_size": self.mean_pool_size,
            "gold_in_pool_rate": self.gold_in_pool_rate,
            "methods": {
                name: {
                    "mean": {str(k): v for k, v in m.mean.items()},
                    "std": {str(k): v for k, v in m.std.items()},
                    "per_seed": {str(k): v for k, v in m.per_seed.items()},
                }
                for name, m in self.methods.items()
            },
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        methods = {
            name: MethodReport(
                mean={int(k): v for k, v in m["mean"].items()},
                std={int(k): v for k, v in m["std"].items()},
                per_seed={int(k): v for k, v in m["per_seed"].items()},
            )
            for name, m in payload["methods"].items()
        }
        return cls(
            seeds=payload["seeds"],
            n_samples=payload["n_samples"],
            methods=methods,
            mean_pool_size=payload["mean_pool_size"],
            gold_in_pool_rate=payload["gold_in_pool_rate"],
        )


def _aggregate(per_seed_values: list[dict[int, float]], ks: Sequence[int]) -> MethodReport:
    mean: dict[int, float] = {}
    std: dict[int, float] = {}
    per_seed: dict[int, list[float]] = {}
    for k in ks:
        values = [v[k] for v in per_seed_values]
        per_seed[k] = values
        mean[k] = float(np.mean(values))
        std[k] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return MethodReport(mean=mean, std=std, per_seed=per_seed)


def selector_results(
    graph: UnifiedGraph,
    samples: Sequence[DialogueSample],
    params: ModelParams,
    provider: EmbeddingProvider,
    config: SelectorConfig | None = None,
    idf: Mapping[str, float] | None = None,
) -> dict[str, SelectionResult]:
    config = config or SelectorConfig()
    return {s.id: select(graph, s, provider, params, config, idf=idf) for s in samples}


def run_eval(
    graph: UnifiedGraph,
    corpus: Sequence[DialogueSample],
    params: ModelParams,
    provider: EmbeddingProvider,
    seeds: Sequence[int],
    ks: Sequence[int] = DEFAULT_KS,
    selector_config: SelectorConfig | None = None,
    idf: Mapping[str, float] | None = None,
) -> EvalReport:
    """Evaluate the greedy selector, the random baseline, and the semantic baseline.

    The selector and semantic rankings are deterministic; the seed list
    drives the random baseline and the +/- dispersion columns.
    """
    if not seeds:
        raise ValidationError("run_eval needs at least one seed")
    golds = {s.id: s.gold_knowledge for s in corpus}
    sel_results = selector_results(graph, corpus, params, provider, selector_config, idf=idf)
    sel_scores = recall_at_k(sel_results, golds, ks)
    selector_per_seed = [dict(sel_scores) for _ in seeds]
    semantic_scores = baseline_semantic(graph, corpus, provider, ks)
    semantic_per_seed = [dict(semantic_scores) for _ in seeds]
    random_per_seed = [baseline_random(graph, corpus, seed, ks) for seed in seeds]

    pool_sizes = [r.pool_size for r in sel_results.values()]
    in_pool = [
        bool(set(kid for kid, _ in r.ranked_pool[: r.pool_size]) & set(golds[sid]))
        for sid, r in sel_results.items()
    ]
    return EvalReport(
        seeds=list(seeds),
        n_samples=len(corpus),
        methods={
            "selector": _aggregate(selector_per_seed, ks),
            "semantic": _aggregate(semantic_per_seed, ks),
            "random": _aggregate(random_per_seed, ks),
        },
        mean_pool_size=float(np.mean(pool_sizes)) if pool_sizes else 0.0,
        gold_in_pool_rate=float(np.mean(in_pool)) if in_pool else 0.0,
    )


def export_ranks_csv(
    results: Mapping[str, SelectionResult],
    golds: Mapping[str, Sequence[str]],
    path: str | Path,
) -> None:
    """Per-sample best gold rank (0 when absent), for error analysis."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "best_gold_rank", "candidates", "pool_size"])
        for sid in sorted(results):
            result = results[sid]
            rank = 0
            gold = set(golds[sid])
            for i, (kid, _) in enumerate(result.ranked_pool, start=1):
                if kid in gold:
                    rank = i
                    break
            writer.writerow([sid, rank, result.candidates, result.pool_size])
