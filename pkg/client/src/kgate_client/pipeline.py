"""Select-then-generate pipeline over a dialogue corpus.

The generator is a caller-supplied callable from prompt text to response
text, so the pipeline runs offline with a mock and carries no model
vendor dependency.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Callable

from .client import ClientConfig, ClientError, build_prompt, select

logger = logging.getLogger(__name__)

Generator = Callable[[str], str]


def read_corpus(path: str | Path) -> list[dict]:
    samples = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        if not line.strip():
            continue
        record = json.loads(line)
        for field in ("id", "history", "utterance"):
            if field not in record:
                raise ValueError(f"line {lineno}: missing field {field!r}")
        samples.append(record)
    return samples


def example_pipeline(
    config: ClientConfig,
    corpus_path: str | Path,
    generator: Generator,
    out_path: str | Path | None = None,
    mode: str = "with_knowledge",
) -> list[dict]:
    """Per sample: select a pool, render the prompt, generate a response.

    Failures are logged per sample and the pipeline continues; the records
    of the successful samples are returned (and written as JSONL when
    ``out_path`` is given). Raises TransportError only if every sample
    failed, so a down service still surfaces as a hard error.
    """
    samples = read_corpus(corpus_path)
    records: list[dict] = []
    failures = 0
    for sample in samples:
        try:
            pool = select(config, list(sample["history"]), sample["utterance"])
            prompt = build_prompt(config, list(sample["history"]), pool.texts(), mode)
            response = generator(prompt)
            records.append({"id": sample["id"], "prompt": prompt, "response": response})
        except ClientError as exc:
            failures += 1
            logger.error("sample %s failed: %s", sample.get("id"), exc)
    if out_path is not None:
        text = "\n".join(json.dumps(r, ensure_ascii=False) for r in records)
        Path(out_path).write_text(text + ("\n" if records else ""), encoding="utf-8")
    if samples and not records:
        from .client import TransportError

        raise TransportError(f"all {failures} samples failed; is the service up?")
    return records
