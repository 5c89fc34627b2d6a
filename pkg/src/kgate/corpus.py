"""Knowledge base and dialogue corpus ingestion.

Two knowledge base shapes are supported: document collections with a
topic / article-title / sentence hierarchy, and flat triple stores.
Dialogue corpora are JSONL, one sample per line. A deterministic
synthetic generator produces desk-scale corpora with a planted lexical
signal so that selection is learnable without pretrained encoders.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Union

from .errors import ParseError, ValidationError

Source = Union[str, Path, bytes, IO[bytes], IO[str]]


@dataclass(frozen=True)
class Article:
    title: str
    sentences: tuple[str, ...]


@dataclass(frozen=True)
class Topic:
    topic: str
    articles: tuple[Article, ...]


@dataclass(frozen=True)
class DocumentKB:
    """Hierarchical document knowledge: topics own articles own sentences."""

    topics: tuple[Topic, ...]

    @property
    def n_titles(self) -> int:
        return sum(len(t.articles) for t in self.topics)

    @property
    def n_sentences(self) -> int:
        return sum(len(a.sentences) for t in self.topics for a in t.articles)


@dataclass(frozen=True)
class TripleKB:
    """Flat store of (head, relation, tail) facts, input order preserved."""

    triples: tuple[tuple[str, str, str], ...]


@dataclass(frozen=True)
class DialogueSample:
    """One supervised dialogue turn.

    ``history`` holds the preceding utterances, ``utterance`` the current
    one. ``gold_knowledge`` lists the knowledge-node ids a good selector
    should surface. ``gold_path`` optionally gives the annotated
    process-node trail leading to the gold knowledge, and ``start_node``
    pins where traversal begins.
    """

    id: str
    history: tuple[str, ...]
    utterance: str
    gold_knowledge: tuple[str, ...]
    gold_path: tuple[str, ...] | None = None
    start_node: str | None = None

    def __post_init__(self):
        if not self.gold_knowledge:
            raise ValidationError(f"sample {self.id!r}: gold_knowledge must be non-empty")


@dataclass(frozen=True)
class SynthConfig:
    """Parameters for the synthetic corpus generator.

    The same config and seed always produce byte-identical output.
    """

    seed: int = 0
    mode: str = "document"  # "document" or "triple"
    n_topics: int = 4
    n_titles_per_topic: int = 2
    n_sentences_per_title: int = 6
    n_entities: int = 12
    n_relations: int = 4
    branching: int = 2
    n_dialogues: int = 20
    vocab_size: int = 200
    path_length: int = 2
    # Tokens planted per sentence and echoed in the paired utterance.
    theme_tokens: int = 2
    unique_tokens: int = 5
    utterance_tokens: int = 4
    noise_tokens: int = 1

    def __post_init__(self):
        if self.mode not in ("document", "triple"):
            raise ValidationError(f"unknown synthetic mode {self.mode!r}")
        counts = {
            "n_topics": self.n_topics,
            "n_titles_per_topic": self.n_titles_per_topic,
            "n_sentences_per_title": self.n_sentences_per_title,
            "n_entities": self.n_entities,
            "n_relations": self.n_relations,
            "branching": self.branching,
            "n_dialogues": self.n_dialogues,
            "vocab_size": self.vocab_size,
            "path_length": self.path_length,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValidationError(f"{name} must be >= 1, got {value}")


def _read_text(source: Source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def parse_document_kb(source: Source) -> DocumentKB:
    """Parse a document KB from its JSON form.

    Expected shape::

        {"topics": [{"topic": str,
                     "articles": [{"title": str, "sentences": [str, ...]}, ...]},
                    ...]}
    """
    text = _read_text(source)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at column {exc.colno}: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(raw, dict) or "topics" not in raw:
        raise ParseError("document KB must be an object with a 'topics' array")

    seen_topics: set[str] = set()
    seen_pairs: set[tuple[str, str]] = set()
    topics = []
    for t in raw["topics"]:
        label = t.get("topic")
        if not isinstance(label, str) or not label:
            raise ValidationError("every topic needs a non-empty 'topic' label")
        if label in seen_topics:
            raise ValidationError(f"duplicate topic label {label!r}")
        seen_topics.add(label)
        articles = []
        for a in t.get("articles", []):
            title = a.get("title")
            if not isinstance(title, str) or not title:
                raise ValidationError(f"topic {label!r}: every article needs a non-empty 'title'")
            if (label, title) in seen_pairs:
                raise ValidationError(f"duplicate article {title!r} under topic {label!r}")
            seen_pairs.add((label, title))
            sentences = tuple(a.get("sentences", []))
            if not sentences or any(not isinstance(s, str) or not s.strip() for s in sentences):
                raise ValidationError(f"article {title!r} must have at least one non-empty sentence")
            articles.append(Article(title=title, sentences=sentences))
        topics.append(Topic(topic=label, articles=tuple(articles)))
    return DocumentKB(topics=tuple(topics))


def serialize_document_kb(kb: DocumentKB) -> str:
    payload = {
        "topics": [
            {
                "topic": t.topic,
                "articles": [
                    {"title": a.title, "sentences": list(a.sentences)} for a in t.articles
                ],
            }
            for t in kb.topics
        ]
    }
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"


def parse_triple_kb(source: Source) -> TripleKB:
    """Parse a tab-separated triple KB: one ``head<TAB>relation<TAB>tail`` per line."""
    text = _read_text(source)
    triples: list[tuple[str, str, str]] = []
    seen: dict[tuple[str, str, str], int] = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", line=lineno)
        head, rel, tail = (p.strip() for p in parts)
        if not head or not rel or not tail:
            raise ParseError("empty triple component", line=lineno)
        triple = (head, rel, tail)
        if triple in seen:
            raise ParseError(
                f"duplicate triple {triple!r} first seen on line {seen[triple]}", line=lineno
            )
        seen[triple] = lineno
        triples.append(triple)
    return TripleKB(triples=tuple(triples))


def serialize_triple_kb(kb: TripleKB) -> str:
    return "".join(f"{h}\t{r}\t{t}\n" for h, r, t in kb.triples)


_REQUIRED_SAMPLE_FIELDS = ("id", "history", "utterance", "gold_knowledge")


def parse_dialogue_corpus(source: Source) -> list[DialogueSample]:
    """Parse a JSONL dialogue corpus, one sample object per line."""
    text = _read_text(source)
    samples: list[DialogueSample] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        for fieldname in _REQUIRED_SAMPLE_FIELDS:
            if fieldname not in raw:
                raise ParseError(f"missing field {fieldname!r}", line=lineno)
        if raw["id"] in seen_ids:
            raise ParseError(f"duplicate sample id {raw['id']!r}", line=lineno)
        seen_ids.add(raw["id"])
        if not raw["gold_knowledge"]:
            raise ParseError("gold_knowledge must be non-empty", line=lineno)
        samples.append(
            DialogueSample(
                id=raw["id"],
                history=tuple(raw["history"]),
                utterance=raw["utterance"],
                gold_knowledge=tuple(raw["gold_knowledge"]),
                gold_path=tuple(raw["gold_path"]) if raw.get("gold_path") else None,
                start_node=raw.get("start_node"),
            )
        )
    return samples


def serialize_dialogue_corpus(samples: Iterable[DialogueSample]) -> str:
    lines = []
    for s in samples:
        record: dict = {
            "id": s.id,
            "history": list(s.history),
            "utterance": s.utterance,
            "gold_knowledge": list(s.gold_knowledge),
        }
        if s.gold_path is not None:
            record["gold_path"] = list(s.gold_path)
        if s.start_node is not None:
            record["start_node"] = s.start_node
        lines.append(json.dumps(record, ensure_ascii=False))
    return "\n".join(lines) + ("\n" if lines else "")


def _vocab(cfg: SynthConfig) -> list[str]:
    return [f"w{i:03d}" for i in range(cfg.vocab_size)]


def _gen_document(cfg: SynthConfig, rng: random.Random):
    from .graph import sentence_knowledge_id, title_node_id, topic_node_id

    vocab = _vocab(cfg)
    topics = []
    sentence_tokens: dict[str, list[str]] = {}
    for ti in range(cfg.n_topics):
        label = f"subject{ti:02d}"
        articles = []
        for ai in range(cfg.n_titles_per_topic):
            title = f"entry{ti:02d}-{ai:02d}"
            theme = rng.sample(vocab, cfg.theme_tokens)
            sentences = []
            for si in range(cfg.n_sentences_per_title):
                unique = rng.sample(vocab, cfg.unique_tokens)
                sentences.append(" ".join(theme + unique))
                sentence_tokens[sentence_knowledge_id(label, title, si)] = unique
            articles.append(Article(title=title, sentences=tuple(sentences)))
        topics.append(Topic(topic=label, articles=tuple(articles)))
    kb = DocumentKB(topics=tuple(topics))

    samples = []
    for di in range(cfg.n_dialogues):
        ti = rng.randrange(cfg.n_topics)
        ai = rng.randrange(cfg.n_titles_per_topic)
        si = rng.randrange(cfg.n_sentences_per_title)
        topic = kb.topics[ti]
        article = topic.articles[ai]
        gold_id = sentence_knowledge_id(topic.topic, article.title, si)
        unique = sentence_tokens[gold_id]
        planted = rng.sample(unique, min(cfg.utterance_tokens, len(unique)))
        noise = rng.sample(vocab, cfg.noise_tokens)
        utterance = " ".join(["tell", "me", "about"] + planted + noise)
        # History quotes the distinguishing tokens of two sibling sentences,
        # which drags any plain mean-of-turns similarity toward distractors.
        history = []
        for offset in (1, 2):
            dsi = (si + offset) % cfg.n_sentences_per_title
            d_id = sentence_knowledge_id(topic.topic, article.title, dsi)
            history.append(" ".join(["earlier", "we", "discussed"] + sentence_tokens[d_id]))
        samples.append(
            DialogueSample(
                id=f"d{di:04d}",
                history=tuple(history),
                utterance=utterance,
                gold_knowledge=(gold_id,),
                gold_path=(topic_node_id(topic.topic), title_node_id(topic.topic, article.title)),
                start_node=topic_node_id(topic.topic),
            )
        )
    return kb, samples


def _gen_triple(cfg: SynthConfig, rng: random.Random):
    from .graph import entity_node_id, triple_knowledge_id

    entities = [f"ent{i:03d}" for i in range(cfg.n_entities)]
    relations = [f"rel{j:02d}" for j in range(cfg.n_relations)]
    triples: list[tuple[str, str, str]] = []
    seen: set[tuple[str, str, str]] = set()

    def add(head: str, tail: str) -> None:
        rel = relations[rng.randrange(cfg.n_relations)]
        triple = (head, rel, tail)
        if triple not in seen and head != tail:
            seen.add(triple)
            triples.append(triple)

    # Random tree keeps the graph connected; each non-root entity heads at
    # least one fact so every traversal endpoint owns knowledge.
    for i in range(1, cfg.n_entities):
        add(entities[i], entities[rng.randrange(i)])
    extra = cfg.n_entities * (cfg.branching - 1)
    attempts = 0
    while extra > 0 and attempts < 50 * cfg.n_entities:
        attempts += 1
        a, b = rng.sample(range(cfg.n_entities), 2)
        before = len(triples)
        add(entities[a], entities[b])
        extra -= len(triples) - before
    kb = TripleKB(triples=tuple(triples))

    neighbors: dict[str, set[str]] = {e: set() for e in entities}
    owned: dict[str, list[tuple[str, str, str]]] = {e: [] for e in entities}
    for h, r, t in triples:
        neighbors[h].add(t)
        neighbors[t].add(h)
        owned[h].append((h, r, t))

    heads = sorted(owned, key=lambda e: entities.index(e))
    heads = [e for e in heads if owned[e]]
    samples = []
    for di in range(cfg.n_dialogues):
        terminal = heads[rng.randrange(len(heads))]
        h, r, t = owned[terminal][rng.randrange(len(owned[terminal]))]
        path = [terminal]
        while len(path) < cfg.path_length:
            options = sorted(neighbors[path[-1]] - set(path))
            if not options:
                break
            path.append(options[rng.randrange(len(options))])
        path.reverse()
        gold_id = triple_knowledge_id(h, r, t)
        distractor = triples[rng.randrange(len(triples))]
        samples.append(
            DialogueSample(
                id=f"d{di:04d}",
                history=(" ".join(["earlier", "we", "discussed", distractor[0], distractor[1]]),),
                utterance=" ".join(["tell", "me", "about", h, r]),
                gold_knowledge=(gold_id,),
                gold_path=tuple(entity_node_id(e) for e in path),
                start_node=entity_node_id(path[0]),
            )
        )
    return kb, samples


def gen_synthetic(cfg: SynthConfig):
    """Generate a (knowledge base, dialogue corpus) pair.

    Document mode plants each dialogue's utterance tokens inside its gold
    sentence; triple mode plants the gold fact's head and relation. Every
    gold_path is adjacent in the unified graph built from the returned KB.
    """
    rng = random.Random(cfg.seed)
    if cfg.mode == "document":
        return _gen_document(cfg, rng)
    return _gen_triple(cfg, rng)
