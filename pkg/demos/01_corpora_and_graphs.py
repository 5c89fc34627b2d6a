"""Build both KB shapes, unify them into graphs, and poke at adjacency.

Run:  python demos/01_corpora_and_graphs.py
"""
import json

from kgate import (
    SynthConfig,
    gen_synthetic,
    parse_document_kb,
    parse_triple_kb,
    unify_documents,
    unify_triples,
    validate,
    verify_corpus,
)

# A hand-written document KB: topics own articles own sentences.
doc_json = json.dumps(
    {
        "topics": [
            {
                "topic": "Veterinary physician",
                "articles": [
                    {
                        "title": "Veterinary physician",
                        "sentences": [
                            "Veterinary physicians treat disease, disorder and injury in animals.",
                            "In many cases the activities of a veterinarian are restricted to registered professionals.",
                        ],
                    }
                ],
            }
        ]
    }
)
doc_kb = parse_document_kb(doc_json.encode("utf-8"))
doc_graph = unify_documents(doc_kb)
print("document graph:")
print(f"  process nodes: {[n.id for n in doc_graph.process_nodes]}")
print(f"  knowledge:     {len(doc_graph.knowledge_nodes)} sentences, owners all titles")
print(f"  violations:    {validate(doc_graph)}")

# A triple KB: every fact becomes a knowledge node on its head entity.
tsv = "Paper Towns\twritten_by\tJohn Green\nPaper Towns\trelease_year\t2008\nJohn Green\twrote\tThe Fault in Our Stars\n"
triple_kb = parse_triple_kb(tsv.encode("utf-8"))
triple_graph = unify_triples(triple_kb)
print("\ntriple graph:")
for node in triple_graph.process_nodes:
    owned = triple_graph.owned_knowledge(node.id)
    print(f"  {node.id}: neighbors={triple_graph.neighbors(node.id)} owns={len(owned)}")

# Desk-scale synthetic corpora with a planted lexical signal.
cfg = SynthConfig(seed=7, mode="document", n_topics=4, n_titles_per_topic=1, n_sentences_per_title=8, n_dialogues=10)
kb, dialogues = gen_synthetic(cfg)
graph = unify_documents(kb)
print(f"\nsynthetic: {len(graph.knowledge_nodes)} sentences, {len(dialogues)} dialogues")
print(f"  corpus consistent with graph: {verify_corpus(graph, dialogues) == []}")
sample = dialogues[0]
print(f"  sample utterance: {sample.utterance!r}")
print(f"  gold knowledge text: {graph.knowledge_node(sample.gold_knowledge[0]).text!r}")
