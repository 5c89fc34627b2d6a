"""Serve selections over HTTP and render generator prompts.

Run:  python demos/06_service_and_prompts.py
"""
import json
import threading
import urllib.request

from kgate import HashedBowProvider
from kgate.corpus import TripleKB
from kgate.graph import unify_triples
from kgate.layers import Dims, init_params
from kgate.prompts import render_prompt
from kgate.selector import SelectorConfig
from kgate.service import RuntimeBundle, make_server

graph = unify_triples(TripleKB(triples=(
    ("Zero Dark Thirty", "written_by", "Mark Boal"),
    ("Zero Dark Thirty", "has_genre", "War film"),
    ("Zero Dark Thirty", "directed_by", "Kathryn Bigelow"),
)))
provider = HashedBowProvider(dim=64)
params = init_params(Dims(d_in=64, d_state=64, d_hidden=32, heads=2), seed=0)
params["know_gate.a"].data[:] = 1.0  # open the text-similarity route for the demo

bundle = RuntimeBundle.build(graph, params, provider, SelectorConfig(t_max=2))
server = make_server(bundle, host="127.0.0.1", port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{server.server_address[1]}"
print(f"service listening on {base}")


def post(path, payload):
    req = urllib.request.Request(base + path, data=json.dumps(payload).encode(),
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


health = json.loads(urllib.request.urlopen(base + "/healthz").read())
print(f"healthz: {health}")

body = post("/select", {"history": [], "utterance": "who wrote Zero Dark Thirty",
                        "start_node": "ent:Zero Dark Thirty"})
print(f"halt node: {body['halt_node']}, pool {body['pool_size']} of {body['candidates']}")
for item in body["pool"][: body["pool_size"]]:
    print(f"  {item['score']:+.3f}  {item['text']}")

rendered = post("/render", {
    "history": ["who wrote Zero Dark Thirty"],
    "pool": [item["text"] for item in body["pool"][: body["pool_size"]]],
    "mode": "with_knowledge",
})
print("\nrendered prompt (service output equals the local renderer byte for byte):")
local = render_prompt(["who wrote Zero Dark Thirty"],
                      [item["text"] for item in body["pool"][: body["pool_size"]]],
                      "with_knowledge")
assert rendered["prompt"] == local
print(rendered["prompt"])
server.shutdown()
