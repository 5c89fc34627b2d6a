"""One selection end to end: context, traversal, ranking, adaptive pool.

Run:  python demos/03_selection_walkthrough.py
"""
import numpy as np

from kgate import HashedBowProvider, SelectorConfig, select
from kgate.corpus import DialogueSample, SynthConfig, gen_synthetic
from kgate.graph import unify_documents
from kgate.layers import Dims, init_params
from kgate.selector import adapt_pool, pool_fraction

cfg = SynthConfig(seed=11, mode="document", n_topics=3, n_titles_per_topic=2, n_sentences_per_title=6, n_dialogues=6)
kb, dialogues = gen_synthetic(cfg)
graph = unify_documents(kb)
provider = HashedBowProvider(dim=64)
params = init_params(Dims(d_in=64, d_state=64, d_hidden=32, heads=2), seed=0)

sample = dialogues[0]
result = select(graph, sample, provider, params, SelectorConfig(t_max=3))
print(f"utterance: {sample.utterance!r}")
print(f"start: {sample.start_node}  halt: {result.halt_node}")
for step in result.trace.steps:
    print(f"  step at {step.node}: chose {step.action} (logp {step.logp:+.3f})")
print(f"candidates |K_t| = {result.candidates}, adaptive cut |K*_t| = {result.pool_size}")
print(f"node score variance = {result.node_score_variance:.4f}")
print("top of the ranking:")
for kid, score in result.ranked_pool[:3]:
    print(f"  {score:+.4f}  {graph.knowledge_node(kid).text[:60]}")

# The pool-size mapping: flat node scores keep everything, confident
# (peaked) scores cut hard, never below one item.
print("\npool fraction by node-score shape (4 candidates):")
for probs, label in [
    (np.full(4, 0.25), "uniform"),
    (np.array([0.55, 0.25, 0.15, 0.05]), "leaning"),
    (np.array([1.0, 0.0, 0.0, 0.0]), "one-hot"),
]:
    size, variance = adapt_pool(probs, 24, SelectorConfig())
    print(f"  {label:8s} var={variance:.4f} frac={pool_fraction(variance, 0.05):.3f} -> {size}/24 kept")
