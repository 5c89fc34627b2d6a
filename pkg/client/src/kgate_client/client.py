"""HTTP client for the knowledge selection service.

The service renders prompts; this client never templates locally, so
prompt bytes always match the server's renderer exactly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import requests


class ClientError(Exception):
    """Base class for client failures."""


class ClientValidationError(ClientError):
    """The request was rejected (4xx); carries the server's message."""


class TransportError(ClientError):
    """The service stayed unreachable or kept failing after retries."""


@dataclass(frozen=True)
class ClientConfig:
    base_url: str = "http://127.0.0.1:8080"
    timeout: float = 10.0
    retries: int = 2
    backoff: float = 0.2

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout}")
        if self.retries < 0:
            raise ValueError(f"retries must be >= 0, got {self.retries}")


@dataclass(frozen=True)
class PoolItem:
    id: str
    text: str
    score: float


@dataclass(frozen=True)
class SelectionPool:
    """Mirror of the service's selection response."""

    pool: tuple[PoolItem, ...]
    pool_size: int
    candidates: int
    halt_node: str
    variance: float
    trace: tuple[dict, ...]

    def selected(self) -> list[PoolItem]:
        """The adaptive cut: the top pool_size entries of the ranking."""
        return list(self.pool[: self.pool_size])

    def texts(self) -> list[str]:
        return [item.text for item in self.selected()]


def _post(config: ClientConfig, path: str, payload: dict) -> dict:
    url = config.base_url.rstrip("/") + path
    last_error: Exception | None = None
    for attempt in range(config.retries + 1):
        try:
            response = requests.post(url, json=payload, timeout=config.timeout)
        except requests.RequestException as exc:
            last_error = exc
            if attempt < config.retries:
                time.sleep(config.backoff * (2**attempt))
            continue
        if 400 <= response.status_code < 500:
            try:
                message = response.json().get("error", response.text)
            except ValueError:
                message = response.text
            raise ClientValidationError(f"{response.status_code}: {message}")
        if response.status_code >= 500 or response.status_code == 503:
            last_error = TransportError(f"{response.status_code}: {response.text[:200]}")
            if attempt < config.retries:
                time.sleep(config.backoff * (2**attempt))
            continue
        return response.json()
    raise TransportError(f"service unreachable after {config.retries + 1} attempts: {last_error}")


def select(config: ClientConfig, history: list[str], utterance: str) -> SelectionPool:
    """Request a knowledge pool for one dialogue turn."""
    if not utterance or not utterance.strip():
        raise ClientValidationError("utterance must be non-empty")
    if not isinstance(history, list) or any(not isinstance(t, str) for t in history):
        raise ClientValidationError("history must be a list of strings")
    body = _post(config, "/select", {"history": history, "utterance": utterance})
    pool = tuple(PoolItem(id=i["id"], text=i["text"], score=i["score"]) for i in body["pool"])
    result = SelectionPool(
        pool=pool,
        pool_size=body["pool_size"],
        candidates=body["candidates"],
        halt_node=body["halt_node"],
        variance=body["variance"],
        trace=tuple(body.get("trace", [])),
    )
    if not 0 <= result.pool_size <= len(result.pool):
        raise ClientValidationError(
            f"inconsistent response: pool_size {result.pool_size} for {len(result.pool)} items"
        )
    return result


def build_prompt(config: ClientConfig, history: list[str], pool: list[str], mode: str) -> str:
    """Fetch the service-rendered generation prompt verbatim."""
    body = _post(config, "/render", {"history": history, "pool": pool, "mode": mode})
    return body["prompt"]


def healthz(config: ClientConfig) -> dict:
    url = config.base_url.rstrip("/") + "/healthz"
    response = requests.get(url, timeout=config.timeout)
    response.raise_for_status()
    return response.json()
