"""JSON-over-HTTP selection service.

Endpoints:
    GET  /healthz            -> {"status": "ok", "graph_nodes": int}
    POST /select             {"history": [str], "utterance": str}  -> selection JSON
    POST /render             {"history": [str], "pool": [str], "mode": str} -> {"prompt": str}
    POST /reload             {"checkpoint": path} -> {"status": "reloaded", "version": int}

Every request reads one immutable bundle snapshot; hot reload swaps the
snapshot pointer atomically, so a swap never interleaves inside a
request. A bounded in-flight counter sheds load with 503.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .corpus import DialogueSample
from .encode import EmbeddingProvider, graph_idf
from .errors import KgateError, ValidationError
from .graph import UnifiedGraph
from .layers import ModelParams, load_params
from .prompts import render_prompt
from .selector import SelectorConfig, select


@dataclass(frozen=True)
class RuntimeBundle:
    """Everything one selection request needs, loaded all-or-nothing."""

    graph: UnifiedGraph
    params: ModelParams
    provider: EmbeddingProvider
    config: SelectorConfig
    idf: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        graph: UnifiedGraph,
        params: ModelParams,
        provider: EmbeddingProvider,
        config: SelectorConfig | None = None,
    ) -> "RuntimeBundle":
        if params.dims.d_in != provider.dim:
            raise ValidationError(
                f"provider dim {provider.dim} does not match model d_in {params.dims.d_in}"
            )
        return cls(
            graph=graph,
            params=params,
            provider=provider,
            config=config or SelectorConfig(),
            idf=graph_idf(graph),
        )


class SelectionService:
    """Holds the current bundle snapshot and serves selection requests."""

    def __init__(self, bundle: RuntimeBundle, max_inflight: int = 32):
        self._bundle = bundle
        self._lock = threading.Lock()
        self._inflight = 0
        self._reloads = 0
        self.max_inflight = max_inflight

    @property
    def bundle(self) -> RuntimeBundle:
        return self._bundle

    def swap_checkpoint(self, checkpoint_path: str) -> int:
        """Load new params and atomically swap in a fresh bundle."""
        params = load_params(checkpoint_path)
        old = self._bundle
        new_bundle = RuntimeBundle.build(old.graph, params, old.provider, old.config)
        self._bundle = new_bundle
        self._reloads += 1
        return self._reloads

    def acquire(self) -> bool:
        with self._lock:
            if self._inflight >= self.max_inflight:
                return False
            self._inflight += 1
            return True

    def release(self) -> None:
        with self._lock:
            self._inflight -= 1


def _handle_select(service: SelectionService, body: dict) -> tuple[int, dict | str]:
    history = body.get("history", [])
    if not isinstance(history, list) or any(not isinstance(t, str) for t in history):
        return 400, {"error": "field 'history' must be a list of strings"}
    utterance = body.get("utterance")
    if not isinstance(utterance, str) or not utterance.strip():
        return 400, {"error": "field 'utterance' must be a non-empty string"}
    bundle = service.bundle  # one snapshot for the whole request
    sample = DialogueSample(
        id="request",
        history=tuple(history),
        utterance=utterance,
        gold_knowledge=("-",),
        start_node=body.get("start_node"),
    )
    try:
        result = select(bundle.graph, sample, bundle.provider, bundle.params, bundle.config, idf=bundle.idf)
    except KgateError as exc:
        return 422, {"error": str(exc)}
    return 200, result.to_json(bundle.graph)


def _handle_render(body: dict) -> tuple[int, dict]:
    history = body.get("history", [])
    pool = body.get("pool", [])
    mode = body.get("mode", "with_knowledge")
    if not isinstance(history, list) or not isinstance(pool, list):
        return 400, {"error": "fields 'history' and 'pool' must be lists of strings"}
    try:
        prompt = render_prompt(history, pool, mode)
    except ValidationError as exc:
        return 422, {"error": str(exc)}
    return 200, {"prompt": prompt}


class _Handler(BaseHTTPRequestHandler):
    server: "ServiceServer"

    def log_message(self, fmt, *args):  # quiet by default
        if self.server.verbose:
            super().log_message(fmt, *args)

    def _reply(self, status: int, payload: dict | str) -> None:
        body = payload if isinstance(payload, str) else json.dumps(payload, ensure_ascii=False)
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path == "/healthz":
            bundle = self.server.service.bundle
            n_nodes = len(bundle.graph.process_nodes) + len(bundle.graph.knowledge_nodes)
            self._reply(200, {"status": "ok", "graph_nodes": n_nodes})
        else:
            self._reply(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):
        service = self.server.service
        if self.path not in ("/select", "/render", "/reload"):
            self._reply(404, {"error": f"unknown path {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length) or b"{}")
            if not isinstance(body, dict):
                raise ValueError("body must be a JSON object")
        except (ValueError, json.JSONDecodeError) as exc:
            self._reply(400, {"error": f"malformed JSON body: {exc}"})
            return
        if not service.acquire():
            self._reply(503, {"error": "overloaded"})
            return
        try:
            if self.path == "/select":
                status, payload = _handle_select(service, body)
            elif self.path == "/render":
                status, payload = _handle_render(body)
            else:
                ckpt = body.get("checkpoint")
                if not isinstance(ckpt, str):
                    status, payload = 400, {"error": "field 'checkpoint' must be a path string"}
                else:
                    try:
                        version = service.swap_checkpoint(ckpt)
                        status, payload = 200, {"status": "reloaded", "version": version}
                    except (KgateError, OSError) as exc:
                        status, payload = 422, {"error": str(exc)}
            self._reply(status, payload)
        finally:
            service.release()


class ServiceServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: SelectionService, verbose: bool = False):
        super().__init__(address, _Handler)
        self.service = service
        self.verbose = verbose


def make_server(bundle: RuntimeBundle, host: str = "127.0.0.1", port: int = 0, max_inflight: int = 32, verbose: bool = False) -> ServiceServer:
    return ServiceServer((host, port), SelectionService(bundle, max_inflight=max_inflight), verbose=verbose)


def serve(bundle: RuntimeBundle, host: str = "127.0.0.1", port: int = 8080, verbose: bool = True) -> None:
    """Serve until interrupted."""
    server = make_server(bundle, host, port, verbose=verbose)
    try:
        server.serve_forever()
    finally:
        server.server_close()
