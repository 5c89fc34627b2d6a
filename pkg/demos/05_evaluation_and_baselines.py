"""Recall@k for the trained selector against the trivial baselines.

Run:  python demos/05_evaluation_and_baselines.py      (about a minute)
"""
from kgate import HashedBowProvider
from kgate.corpus import SynthConfig, gen_synthetic
from kgate.evaluate import run_eval
from kgate.graph import unify_documents
from kgate.layers import Dims
from kgate.selector import SelectorConfig
from kgate.training import TrainConfig, train

cfg = SynthConfig(seed=33, mode="document", n_topics=6, n_titles_per_topic=1,
                  n_sentences_per_title=20, n_dialogues=90, vocab_size=200, utterance_tokens=5)
kb, samples = gen_synthetic(cfg)
graph = unify_documents(kb)
train_set, test_set = samples[:60], samples[60:]
provider = HashedBowProvider(dim=96)

config = TrainConfig(
    epochs=25, batch_size=2, rollouts_per_sample=4, max_lr=6e-3, warmup_frac=0.15,
    seed=1, dims=Dims(d_in=96, d_state=96, d_hidden=48, heads=4), reward_baseline=True,
    selector=SelectorConfig(traversal="sampled"),
)
params, _ = train(graph, train_set, provider, config, eval_corpus=test_set)

report = run_eval(graph, test_set, params, provider, seeds=[0, 1, 2], ks=[1, 5, 10])
print(f"{len(test_set)} held-out dialogues, seeds {report.seeds}")
for name, method in report.methods.items():
    cells = "  ".join(f"R@{k}={method.mean[k]:.3f}+/-{method.std[k]:.3f}" for k in (1, 5, 10))
    print(f"  {name:9s} {cells}")
print(f"mean adaptive pool size: {report.mean_pool_size:.1f}")
print(f"gold inside the adaptive pool: {report.gold_in_pool_rate:.2f}")

# The fixed-size comparison mode trades pool size against hit rate.
for k in (1, 5, 20):
    fixed = run_eval(graph, test_set, params, provider, seeds=[0],
                     selector_config=SelectorConfig(pool_mode="fixed", fixed_k=k))
    print(f"fixed pool k={k:<2}: mean size {fixed.mean_pool_size:.1f}, gold in pool {fixed.gold_in_pool_rate:.2f}")
