"""Prompt byte-parity against the primary renderer's golden files.

The client never templates locally, so parity holds exactly when the
service's bytes pass through untouched (mock case) and when the real
service renders the same inputs (integration case).
"""
import json
import subprocess
import sys
import time
from importlib import util as importlib_util
from pathlib import Path

import pytest
import requests

from kgate_client import ClientConfig, build_prompt

GOLDEN = Path(__file__).parent / "golden"

HISTORY = [
    "I want to be a veterinary physician when I grow up.",
    "That's really ambitious. What makes you want to be a veterinarian?",
]
POOL = [
    "In many cases, the activities that may be undertaken by a veterinarian are restricted to registered professionals.",
    "Veterinary physicians treat disease, disorder and injury in animals.",
]


def test_mock_passthrough_preserves_golden_bytes(mock_service):
    golden = (GOLDEN / "prompt_with_knowledge.txt").read_text(encoding="utf-8")
    mock_service.render_template = golden.replace("{", "{{").replace("}", "}}")
    config = ClientConfig(base_url=mock_service.url, timeout=2.0, retries=0)
    prompt = build_prompt(config, HISTORY, POOL, "with_knowledge")
    assert prompt.encode("utf-8") == golden.encode("utf-8")


@pytest.mark.skipif(importlib_util.find_spec("kgate") is None, reason="primary package not installed")
def test_real_service_matches_golden_bytes(tmp_path):
    graph_path = tmp_path / "g.json"
    ckpt_path = tmp_path / "m.json"
    build = (
        "from kgate.corpus import TripleKB; from kgate.graph import unify_triples, save_graph; "
        "from kgate.layers import Dims, init_params, save_params; "
        "save_graph(unify_triples(TripleKB(triples=(('a','r','b'),))), %r); "
        "save_params(init_params(Dims(d_in=32, d_state=32, d_hidden=16, heads=2), seed=0), %r)"
        % (str(graph_path), str(ckpt_path))
    )
    subprocess.run([sys.executable, "-c", build], check=True)
    proc = subprocess.Popen(
        [sys.executable, "-m", "kgate.cli", "serve", "--graph", str(graph_path),
         "--ckpt", str(ckpt_path), "--embed-dim", "32", "--bind", "127.0.0.1:8801"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE,
    )
    config = ClientConfig(base_url="http://127.0.0.1:8801", timeout=5.0, retries=3, backoff=0.25)
    try:
        for _ in range(40):
            try:
                requests.get(config.base_url + "/healthz", timeout=0.5)
                break
            except requests.RequestException:
                time.sleep(0.25)
        with_k = build_prompt(config, HISTORY, POOL, "with_knowledge")
        internal = build_prompt(config, HISTORY, [], "internal_only")
        assert with_k.encode("utf-8") == (GOLDEN / "prompt_with_knowledge.txt").read_bytes()
        assert internal.encode("utf-8") == (GOLDEN / "prompt_internal_only.txt").read_bytes()
    finally:
        proc.terminate()
        proc.wait(timeout=5)
