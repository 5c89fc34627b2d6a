"""Static encodings, keyword extraction, and the attention building blocks.

Run:  python demos/02_encodings_and_attention.py
"""
import numpy as np

from kgate import HashedBowProvider, extract_keywords, graph_idf
from kgate.autodiff import Tensor
from kgate.corpus import SynthConfig, gen_synthetic
from kgate.encode import encode_node
from kgate.graph import unify_documents
from kgate.layers import Dims, gat_forward, grad_check, init_params, mha_forward

provider = HashedBowProvider(dim=64)
a = provider.embed_text("who wrote Zero Dark Thirty")
b = provider.embed_text("Zero Dark Thirty written_by Mark Boal")
c = provider.embed_text("completely unrelated sentence about gardening")
print(f"similarity(question, right fact)  = {a.dot(b):+.3f}")
print(f"similarity(question, wrong fact)  = {a.dot(c):+.3f}")

kb, _ = gen_synthetic(SynthConfig(seed=3, mode="document", n_topics=2, n_titles_per_topic=1, n_sentences_per_title=4))
graph = unify_documents(kb)
idf = graph_idf(graph)
keywords = extract_keywords(["we talked about films"], "who wrote Zero Dark Thirty", k=5, idf=idf)
print(f"keywords: {keywords.terms()}  (stopword 'who' dropped)")

node = graph.process_nodes[1]
print(f"node encoding for {node.id}: norm = {np.linalg.norm(encode_node(graph, provider, node.id).values):.3f}")

# One attention layer over a toy path graph, and a gradient check of a
# small composite loss against central finite differences.
dims = Dims(d_in=8, d_state=8, d_hidden=8, heads=2)
params = init_params(dims, seed=0)
rng = np.random.default_rng(0)
features = Tensor(rng.normal(size=(3, 8)))
out = gat_forward(features, [(0, 1), (1, 2)], params, "graph_gat")
print(f"graph attention output shape: {out.data.shape}")

att = mha_forward(Tensor(rng.normal(size=8)), [Tensor(rng.normal(size=8)) for _ in range(3)], params, "state_attn")
print(f"attention weights per head (rows sum to 1):\n{att.weights.round(3)}")


def loss_fn(p):
    import kgate.autodiff as ad

    enc = gat_forward(features, [(0, 1), (1, 2)], p, "graph_gat")
    return ad.tsum(ad.mul(enc, enc))


print(f"max relative gradient error vs finite differences: {grad_check(loss_fn, params, sample_frac=0.05):.2e}")
