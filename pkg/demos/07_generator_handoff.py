"""Full hand-off loop: serve selections, consume them with the client
library, and feed the rendered prompts to a (mock) generator.

Requires the companion client package:  pip install -e client/
Run:  python demos/07_generator_handoff.py
"""
import json
import tempfile
import threading
from pathlib import Path

from kgate import HashedBowProvider
from kgate.corpus import SynthConfig, gen_synthetic, serialize_dialogue_corpus
from kgate.graph import unify_documents
from kgate.layers import Dims, init_params
from kgate.selector import SelectorConfig
from kgate.service import RuntimeBundle, make_server

try:
    from kgate_client import ClientConfig, example_pipeline
except ImportError:
    raise SystemExit("install the client first: pip install -e client/")

cfg = SynthConfig(seed=5, mode="document", n_topics=3, n_titles_per_topic=1,
                  n_sentences_per_title=6, n_dialogues=6, vocab_size=80)
kb, dialogues = gen_synthetic(cfg)
graph = unify_documents(kb)
provider = HashedBowProvider(dim=64)
params = init_params(Dims(d_in=64, d_state=64, d_hidden=32, heads=2), seed=0)
params["know_gate.a"].data[:] = 1.0

server = make_server(RuntimeBundle.build(graph, params, provider, SelectorConfig()), port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
base_url = f"http://127.0.0.1:{server.server_address[1]}"
print(f"service on {base_url}")

with tempfile.TemporaryDirectory() as tmp:
    corpus_path = Path(tmp) / "corpus.jsonl"
    corpus_path.write_text(serialize_dialogue_corpus(dialogues), encoding="utf-8")
    out_path = Path(tmp) / "responses.jsonl"

    def mock_generator(prompt: str) -> str:
        first_fact = prompt.split("Reference knowledge:\n")[1].split("\n")[0]
        return f"As I recall, {first_fact}."

    records = example_pipeline(
        ClientConfig(base_url=base_url, timeout=5.0, retries=1),
        corpus_path,
        generator=mock_generator,
        out_path=out_path,
    )
    print(f"pipeline produced {len(records)} records")
    first = json.loads(out_path.read_text().split("\n")[0])
    print(f"sample id {first['id']}: response = {first['response']!r}")

server.shutdown()
