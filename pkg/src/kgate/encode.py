"""Static text encodings, keyword extraction, and node encodings.

Embeddings come from a pluggable provider. The default is a hashed
bag-of-words encoder that needs no model files; a file-backed provider
ingests precomputed vectors (one JSONL record per id) for users who want
transformer embeddings. Process nodes are encoded as the re-normalized
mean of the embeddings of the knowledge they own.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ProviderError, ValidationError
from .graph import UnifiedGraph

DEFAULT_DIM = 384

_TOKEN_RE = re.compile(r"[0-9a-z]+")

# Compact English stopword list; override via extract_keywords(stopwords=...).
STOPWORDS = frozenset(
    """
    a an the and or but if then else of in on at to for with from by as about
    into over under again further once here there all any both each few more
    most other some such only own same so than too very s t just don now
    who whom whose what which when where why how
    is are was were be been being am do does did doing have has had having
    i you he she it we they me him her us them my your his its our their
    this that these those
    not no nor yes can could will would shall should may might must
    tell say said know like want please oh hey hi hello thanks thank
    """.split()
)

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211
_FNV_MASK = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _FNV_MASK
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def dot(self, other: "Embedding") -> float:
        return float(self.values @ other.values)


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return vec
    return vec / norm


class EmbeddingProvider:
    """Base interface: deterministic text and id lookups of uniform dimension."""

    dim: int

    def embed_text(self, text: str) -> Embedding:
        raise NotImplementedError

    def embed_id(self, item_id: str, fallback_text: str | None = None) -> Embedding:
        """Embedding for a graph node id; defaults to embedding its text."""
        if fallback_text is None:
            raise ProviderError(f"no text available for id {item_id!r}")
        return self.embed_text(fallback_text)


class HashedBowProvider(EmbeddingProvider):
    """Hashed bag-of-words encoder.

    Lowercases, splits on non-alphanumerics, buckets each token by its
    FNV-1a 64-bit hash modulo the dimension, and L2-normalizes the counts.
    Empty text maps to the zero vector.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValidationError(f"dimension must be >= 1, got {dim}")
        self.dim = dim

    def embed_text(self, text: str) -> Embedding:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            vec[fnv1a_64(token.encode("utf-8")) % self.dim] += 1.0
        return Embedding(values=_normalize(vec))


def text_key(text: str) -> str:
    """Stable lookup key for raw dialogue text in vector files."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class FileBackedProvider(EmbeddingProvider):
    """Precomputed vectors keyed by node id or sha256 of raw text.

    Vector file format: JSONL, one ``{"id": str, "vector": [float, ...]}``
    per line, uniform dimension. Vectors are L2-normalized on load.
    """

    def __init__(self, table: Mapping[str, np.ndarray]):
        if not table:
            raise ValidationError("file-backed provider needs at least one vector")
        dims = {v.shape[0] for v in table.values()}
        if len(dims) != 1:
            raise ValidationError(f"vector dimensions are not uniform: {sorted(dims)}")
        self.dim = dims.pop()
        self._table = {k: _normalize(np.asarray(v, dtype=np.float64)) for k, v in table.items()}

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "FileBackedProvider":
        table: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            table[record["id"]] = np.asarray(record["vector"], dtype=np.float64)
        return cls(table)

    def embed_text(self, text: str) -> Embedding:
        key = text_key(text)
        if key not in self._table:
            raise ProviderError(f"no vector for text key {key!r} (text {text[:40]!r})")
        return Embedding(values=self._table[key])

    def embed_id(self, item_id: str, fallback_text: str | None = None) -> Embedding:
        if item_id in self._table:
            return Embedding(values=self._table[item_id])
        if fallback_text is not None:
            key = text_key(fallback_text)
            if key in self._table:
                return Embedding(values=self._table[key])
        raise ProviderError(f"no vector for id {item_id!r}")


def embed_text(provider: EmbeddingProvider, text: str) -> Embedding:
    return provider.embed_text(text)


def encode_node(graph: UnifiedGraph, provider: EmbeddingProvider, node_id: str) -> Embedding:
    """Static encoding of a process node.

    Mean of the embeddings of its owned knowledge, re-normalized. Nodes
    that own nothing (document topics) fall back to their label text.
    """
    owned = graph.owned_knowledge(node_id)
    if not owned:
        node = graph.process_node(node_id)
        return provider.embed_id(node_id, fallback_text=node.label)
    vectors = [
        provider.embed_id(kid, fallback_text=graph.knowledge_node(kid).text).values for kid in owned
    ]
    return Embedding(values=_normalize(np.mean(vectors, axis=0)))


def encode_knowledge(graph: UnifiedGraph, provider: EmbeddingProvider, knowledge_id: str) -> Embedding:
    return provider.embed_id(knowledge_id, fallback_text=graph.knowledge_node(knowledge_id).text)


def build_idf(texts: Iterable[str]) -> dict[str, float]:
    """Smoothed inverse document frequency over a text collection."""
    df: dict[str, int] = {}
    n_docs = 0
    for text in texts:
        n_docs += 1
        for token in set(tokenize(text)):
            df[token] = df.get(token, 0) + 1
    return {tok: math.log((1 + n_docs) / (1 + count)) + 1.0 for tok, count in df.items()}


def graph_idf(graph: UnifiedGraph) -> dict[str, float]:
    return build_idf(k.text for k in graph.knowledge_nodes)


@dataclass(frozen=True)
class KeywordSet:
    keywords: tuple[tuple[str, float], ...]  # (term, weight), weight descending

    def terms(self) -> list[str]:
        return [t for t, _ in self.keywords]


def extract_keywords(
    history: Iterable[str],
    utterance: str,
    k: int,
    idf: Mapping[str, float] | None = None,
    stopwords: frozenset[str] | None = None,
) -> KeywordSet:
    """Top-k TF-IDF keywords from the concatenated conversation turns.

    ``idf`` normally comes from the knowledge side (see ``graph_idf``);
    terms unseen there get the maximum smoothed idf. Ties break
    lexicographically. Stopwords are removed before scoring.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    stop = STOPWORDS if stopwords is None else stopwords
    tf: dict[str, int] = {}
    for text in list(history) + [utterance]:
        for token in tokenize(text):
            if token not in stop:
                tf[token] = tf.get(token, 0) + 1
    if not tf:
        return KeywordSet(keywords=())
    if idf:
        default_idf = max(idf.values())
        weights = {tok: count * idf.get(tok, default_idf) for tok, count in tf.items()}
    else:
        weights = {tok: float(count) for tok, count in tf.items()}
    ranked = sorted(weights.items(), key=lambda item: (-item[1], item[0]))[:k]
    return KeywordSet(keywords=tuple(ranked))
