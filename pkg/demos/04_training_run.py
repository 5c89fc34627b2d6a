"""Train the selection policy on a small planted corpus and watch it learn.

Run:  python demos/04_training_run.py        (about a minute)
"""
import numpy as np

from kgate import HashedBowProvider
from kgate.corpus import SynthConfig, gen_synthetic
from kgate.graph import unify_documents
from kgate.layers import Dims
from kgate.selector import SelectorConfig
from kgate.training import TrainConfig, train

cfg = SynthConfig(seed=21, mode="document", n_topics=4, n_titles_per_topic=2,
                  n_sentences_per_title=10, n_dialogues=60, vocab_size=200, utterance_tokens=5)
kb, samples = gen_synthetic(cfg)
graph = unify_documents(kb)
train_set, test_set = samples[:40], samples[40:]
provider = HashedBowProvider(dim=96)

config = TrainConfig(
    epochs=25,
    batch_size=2,
    rollouts_per_sample=4,
    max_lr=6e-3,
    warmup_frac=0.15,
    seed=0,
    dims=Dims(d_in=96, d_state=96, d_hidden=48, heads=4),
    reward_baseline=True,
    selector=SelectorConfig(traversal="sampled"),
)
params, report = train(graph, train_set, provider, config, eval_corpus=test_set)

print("epoch  l_walk  l_node  l_knowledge  reward  held-out R@1  |K*| mean")
for rec in report.epochs:
    print(
        f"{rec['epoch']:>5}  {rec['l_walk']:+.3f}  {rec['l_node']:.4f}  "
        f"{rec['l_knowledge']:.4f}   {rec['reward_mean']:+.3f}      {rec['r_at_1']:.2f}       {rec['pool_mean']:.1f}"
    )
print(f"\nidentity gate a = {float(params['know_gate.a'].data[0]):.2f}, "
      f"score gain = {float(params['know_scale.g'].data[0]):.2f}")
print(f"utterance-slot attention bias (head 0): {params['modality_attn.h0.b'].data.round(2).tolist()}")
