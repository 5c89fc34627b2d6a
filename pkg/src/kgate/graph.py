"""Unified graph over heterogeneous knowledge bases.

Both KB shapes map onto one structure: process nodes carry traversal
structure (topics, article titles, or entities) and knowledge nodes each
hold one selectable unit of text, owned by exactly one process node.
Document KBs become a two-layer forest (topic over title); triple KBs
keep their original entity graph, with each fact linearized into a
knowledge node hung off its head entity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import DialogueSample, DocumentKB, TripleKB
from .errors import GraphError, ValidationError

GRAPH_FORMAT_VERSION = 1


def topic_node_id(topic: str) -> str:
    return f"topic:{topic}"


def title_node_id(topic: str, title: str) -> str:
    return f"title:{topic}::{title}"


def sentence_knowledge_id(topic: str, title: str, index: int) -> str:
    return f"sent:{topic}::{title}::{index}"


def entity_node_id(entity: str) -> str:
    return f"ent:{entity}"


def triple_knowledge_id(head: str, relation: str, tail: str) -> str:
    return f"fact:{head}|{relation}|{tail}"


@dataclass(frozen=True)
class ProcessNode:
    id: str
    label: str
    kind: str  # "topic" | "title" | "entity"


@dataclass(frozen=True)
class KnowledgeNode:
    id: str
    text: str
    owner: str  # process node id


@dataclass
class UnifiedGraph:
    """Immutable-after-construction graph of process and knowledge nodes.

    ``edges`` are undirected (stored once, traversed both ways) and carry a
    provenance label: the containment relation for documents, the original
    relation name for triples.
    """

    kind: str  # "document" | "triple"
    process_nodes: list[ProcessNode]
    knowledge_nodes: list[KnowledgeNode]
    edges: list[tuple[str, str, str]]  # (src, dst, label)
    _adjacency: dict[str, list[str]] = field(default_factory=dict, repr=False)
    _process_by_id: dict[str, ProcessNode] = field(default_factory=dict, repr=False)
    _knowledge_by_id: dict[str, KnowledgeNode] = field(default_factory=dict, repr=False)
    _owned: dict[str, list[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._process_by_id = {n.id: n for n in self.process_nodes}
        self._knowledge_by_id = {k.id: k for k in self.knowledge_nodes}
        adj: dict[str, set[str]] = {n.id: set() for n in self.process_nodes}
        for src, dst, _label in self.edges:
            if src in adj and dst in adj:
                adj[src].add(dst)
                adj[dst].add(src)
        self._adjacency = {nid: sorted(peers) for nid, peers in adj.items()}
        owned: dict[str, list[str]] = {n.id: [] for n in self.process_nodes}
        for k in self.knowledge_nodes:
            owned.setdefault(k.owner, []).append(k.id)
        self._owned = owned

    def process_node(self, node_id: str) -> ProcessNode:
        try:
            return self._process_by_id[node_id]
        except KeyError:
            raise GraphError(f"unknown process node {node_id!r}") from None

    def knowledge_node(self, knowledge_id: str) -> KnowledgeNode:
        try:
            return self._knowledge_by_id[knowledge_id]
        except KeyError:
            raise GraphError(f"unknown knowledge node {knowledge_id!r}") from None

    def has_process_node(self, node_id: str) -> bool:
        return node_id in self._process_by_id

    def has_knowledge(self, knowledge_id: str) -> bool:
        return knowledge_id in self._knowledge_by_id

    def owned_knowledge(self, node_id: str) -> list[str]:
        """Knowledge node ids owned by ``node_id``, in insertion order."""
        self.process_node(node_id)
        return list(self._owned.get(node_id, []))

    def neighbors(self, node_id: str) -> list[str]:
        """One-hop neighbors, id-sorted, symmetric across edge direction."""
        self.process_node(node_id)
        return list(self._adjacency[node_id])

    def degree(self, node_id: str) -> int:
        return sum(1 for src, dst, _ in self.edges if node_id in (src, dst))


def unify_documents(kb: DocumentKB) -> UnifiedGraph:
    """Map a document KB onto the unified graph.

    One process node per topic and per (topic, title) pair, one knowledge
    node per sentence owned by its title node, and a topic-title edge for
    each containment relation.
    """
    if not kb.topics:
        raise ValidationError("cannot unify an empty document KB")
    process: list[ProcessNode] = []
    knowledge: list[KnowledgeNode] = []
    edges: list[tuple[str, str, str]] = []
    for topic in kb.topics:
        tid = topic_node_id(topic.topic)
        process.append(ProcessNode(id=tid, label=topic.topic, kind="topic"))
        for article in topic.articles:
            aid = title_node_id(topic.topic, article.title)
            process.append(ProcessNode(id=aid, label=article.title, kind="title"))
            edges.append((tid, aid, "contains"))
            for si, sentence in enumerate(article.sentences):
                knowledge.append(
                    KnowledgeNode(
                        id=sentence_knowledge_id(topic.topic, article.title, si),
                        text=sentence,
                        owner=aid,
                    )
                )
    return UnifiedGraph(kind="document", process_nodes=process, knowledge_nodes=knowledge, edges=edges)


def unify_triples(kb: TripleKB) -> UnifiedGraph:
    """Map a triple KB onto the unified graph.

    The original entity graph is preserved: one process node per distinct
    entity and one undirected edge per triple. Each triple also becomes a
    knowledge node, its text the space-joined "head relation tail", owned
    by the head entity.
    """
    if not kb.triples:
        raise ValidationError("cannot unify an empty triple KB")
    entities: dict[str, ProcessNode] = {}
    knowledge: list[KnowledgeNode] = []
    edges: list[tuple[str, str, str]] = []
    for head, rel, tail in kb.triples:
        for name in (head, tail):
            nid = entity_node_id(name)
            if nid not in entities:
                entities[nid] = ProcessNode(id=nid, label=name, kind="entity")
        knowledge.append(
            KnowledgeNode(
                id=triple_knowledge_id(head, rel, tail),
                text=f"{head} {rel} {tail}",
                owner=entity_node_id(head),
            )
        )
        edges.append((entity_node_id(head), entity_node_id(tail), rel))
    return UnifiedGraph(
        kind="triple",
        process_nodes=list(entities.values()),
        knowledge_nodes=knowledge,
        edges=edges,
    )


def neighbors(graph: UnifiedGraph, node_id: str) -> list[str]:
    return graph.neighbors(node_id)


def validate(graph: UnifiedGraph) -> list[str]:
    """Check every structural invariant; returns one message per violation."""
    report: list[str] = []
    seen_process: set[str] = set()
    for node in graph.process_nodes:
        if node.id in seen_process:
            report.append(f"duplicate process node id {node.id!r}")
        seen_process.add(node.id)
        expected_kinds = {"document": ("topic", "title"), "triple": ("entity",)}[graph.kind]
        if node.kind not in expected_kinds:
            report.append(f"process node {node.id!r} has kind {node.kind!r}, expected one of {expected_kinds}")
    seen_knowledge: set[str] = set()
    for k in graph.knowledge_nodes:
        if k.id in seen_knowledge:
            report.append(f"duplicate knowledge node id {k.id!r}")
        seen_knowledge.add(k.id)
        if k.owner not in seen_process:
            report.append(f"knowledge node {k.id!r} has dangling owner {k.owner!r}")
        elif graph.kind == "document" and graph.process_node(k.owner).kind != "title":
            report.append(f"knowledge node {k.id!r} owned by non-title node {k.owner!r}")
    for src, dst, label in graph.edges:
        if src not in seen_process or dst not in seen_process:
            report.append(f"edge ({src!r}, {dst!r}) references a missing node")
            continue
        if graph.kind == "document":
            kinds = (graph.process_node(src).kind, graph.process_node(dst).kind)
            if kinds != ("topic", "title"):
                report.append(f"document edge ({src!r}, {dst!r}) is {kinds[0]}-{kinds[1]}, not topic-title")
    if graph.kind == "document":
        # Two-layer forest: each title hangs under exactly one topic.
        parents: dict[str, int] = {}
        for src, dst, _ in graph.edges:
            if src in seen_process and dst in seen_process:
                parents[dst] = parents.get(dst, 0) + 1
        for node in graph.process_nodes:
            if node.kind == "title" and parents.get(node.id, 0) != 1:
                report.append(f"title node {node.id!r} has {parents.get(node.id, 0)} parent topics, expected 1")
    return report


def verify_corpus(graph: UnifiedGraph, samples: list[DialogueSample]) -> list[str]:
    """Cross-check a dialogue corpus against a unified graph."""
    report = []
    for s in samples:
        for gid in s.gold_knowledge:
            if not graph.has_knowledge(gid):
                report.append(f"sample {s.id!r}: gold knowledge {gid!r} not in graph")
        if s.start_node is not None and not graph.has_process_node(s.start_node):
            report.append(f"sample {s.id!r}: start node {s.start_node!r} not in graph")
        if s.gold_path:
            for nid in s.gold_path:
                if not graph.has_process_node(nid):
                    report.append(f"sample {s.id!r}: path node {nid!r} not in graph")
            for a, b in zip(s.gold_path, s.gold_path[1:]):
                if graph.has_process_node(a) and graph.has_process_node(b) and b not in graph.neighbors(a):
                    report.append(f"sample {s.id!r}: path step {a!r} -> {b!r} is not an edge")
    return report


def save_graph(graph: UnifiedGraph, path: str | Path) -> None:
    payload = {
        "version": GRAPH_FORMAT_VERSION,
        "kind": graph.kind,
        "process_nodes": [{"id": n.id, "label": n.label, "kind": n.kind} for n in graph.process_nodes],
        "knowledge_nodes": [{"id": k.id, "text": k.text, "owner": k.owner} for k in graph.knowledge_nodes],
        "edges": [[src, dst, label] for src, dst, label in graph.edges],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False) + "\n", encoding="utf-8")


def load_graph(path: str | Path) -> UnifiedGraph:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("version")
    if version != GRAPH_FORMAT_VERSION:
        raise GraphError(f"unsupported graph file version {version!r}")
    return UnifiedGraph(
        kind=payload["kind"],
        process_nodes=[ProcessNode(**n) for n in payload["process_nodes"]],
        knowledge_nodes=[KnowledgeNode(**k) for k in payload["knowledge_nodes"]],
        edges=[tuple(e) for e in payload["edges"]],
    )
