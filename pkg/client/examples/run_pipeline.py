"""Run the select-prompt-generate pipeline against a live service.

Usage:
    python examples/run_pipeline.py --base-url http://127.0.0.1:8080 \
        --corpus corpus.jsonl --out responses.jsonl [--mode with_knowledge]

The generator here is a stub that echoes the first reference fact; swap
in any callable from prompt text to response text (an LLM API call, a
local model, ...).
"""
import argparse
import logging
import sys

from kgate_client import ClientConfig, TransportError, example_pipeline, healthz


def stub_generator(prompt: str) -> str:
    if "Reference knowledge:" in prompt:
        fact = prompt.split("Reference knowledge:\n")[1].split("\n")[0]
        return f"Based on what I know, {fact}."
    return "Happy to keep chatting."


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--base-url", default="http://127.0.0.1:8080")
    parser.add_argument("--corpus", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--mode", default="with_knowledge", choices=["with_knowledge", "internal_only"])
    parser.add_argument("--timeout", type=float, default=10.0)
    parser.add_argument("--retries", type=int, default=2)
    args = parser.parse_args(argv)

    config = ClientConfig(base_url=args.base_url, timeout=args.timeout, retries=args.retries)
    try:
        print(f"service: {healthz(config)}")
        records = example_pipeline(config, args.corpus, stub_generator, out_path=args.out, mode=args.mode)
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(records)} records to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
