"""Command-line operator surface.

Subcommands: synth, unify, train, eval, select, serve, render-prompt.
Flat ``key = value`` config files supply defaults (path from --config or
the GATE_CONFIG environment variable); explicit flags win. Exit codes:
0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluate as eval_mod
from . import graph as graph_mod
from .encode import FileBackedProvider, HashedBowProvider
from .errors import KgateError, ParseError, ValidationError
from .layers import Dims, load_params, save_params
from .prompts import render_prompt
from .selector import SelectorConfig, select
from .service import RuntimeBundle, serve
from .training import RewardConfig, TrainConfig, train

CONFIG_ENV_VAR = "GATE_CONFIG"


class _UsageExit(Exception):
    def __init__(self, message: str):
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageExit(message)


def parse_config_file(path: str | Path) -> dict:
    """Flat key = value config: strings (optionally quoted), numbers, booleans."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError("expected 'key = value'", line=lineno)
        key, _, raw = stripped.partition("=")
        key = key.strip().replace("-", "_")
        raw = raw.strip()
        if not key:
            raise ParseError("empty key", line=lineno)
        if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
            values[key] = raw[1:-1]
        elif raw.lower() in ("true", "false"):
            values[key] = raw.lower() == "true"
        else:
            try:
                values[key] = int(raw)
            except ValueError:
                try:
                    values[key] = float(raw)
                except ValueError:
                    values[key] = raw
    return values


def _build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="kgate", description="Knowledge pre-selection engine")
    parser.add_argument("--config", help="flat key=value config file (default: $GATE_CONFIG)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--precision", choices=["float32", "float64"], default="float64")
    # The same globals are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering a value given before it.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--precision", choices=["float32", "float64"], default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic KB and dialogue corpus", parents=[common])
    p.add_argument("--mode", choices=["document", "triple"], default="document")
    p.add_argument("--out-kb", required=True)
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--n-topics", type=int, default=4)
    p.add_argument("--n-titles", type=int, default=2)
    p.add_argument("--n-sentences", type=int, default=6)
    p.add_argument("--n-entities", type=int, default=12)
    p.add_argument("--n-relations", type=int, default=4)
    p.add_argument("--branching", type=int, default=2)
    p.add_argument("--n-dialogues", type=int, default=20)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--path-length", type=int, default=2)

    p = sub.add_parser("unify", help="build the unified graph from a KB file", parents=[common])
    p.add_argument("--kb", required=True)
    p.add_argument("--kind", choices=["document", "triple"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train selection parameters on a corpus", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--kb")
    p.add_argument("--kind", choices=["document", "triple"])
    p.add_argument("--graph")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--rollouts", type=int, default=4)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--weight-decay", type=float, default=0.12)
    p.add_argument("--warmup-frac", type=float, default=0.3)
    p.add_argument("--holdout-frac", type=float, default=0.2)
    p.add_argument("--no-walk-loss", action="store_true")
    p.add_argument("--no-node-loss", action="store_true")
    p.add_argument("--no-knowledge-loss", action="store_true")
    p.add_argument("--no-node-attention", action="store_true")
    p.add_argument("--embed-dim", type=int, default=384)
    p.add_argument("--embeddings", help="precomputed vector JSONL (otherwise hashed bag of words)")
    p.add_argument("--d-state", type=int, default=256)
    p.add_argument("--d-hidden", type=int, default=128)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--t-max", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.2)

    p = sub.add_parser("eval", help="recall@k for the selector and trivial baselines", parents=[common])
    p.add_argument("--graph", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--ks", default="1,5,10")
    p.add_argument("--fixed-pool", type=int)
    p.add_argument("--embed-dim", type=int, default=384)
    p.add_argument("--embeddings")
    p.add_argument("--t-max", type=int, default=3)
    p.add_argument("--out")

    p = sub.add_parser("select", help="one-shot selection for a single turn", parents=[common])
    p.add_argument("--graph", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--utterance", required=True)
    p.add_argument("--turn", action="append", default=[], help="history turn (repeatable, oldest first)")
    p.add_argument("--start-node")
    p.add_argument("--fixed-pool", type=int)
    p.add_argument("--embed-dim", type=int, default=384)
    p.add_argument("--embeddings")
    p.add_argument("--t-max", type=int, default=3)
    p.add_argument("--no-node-attention", action="store_true")

    p = sub.add_parser("serve", help="run the JSON-over-HTTP selection service", parents=[common])
    p.add_argument("--graph", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bind", default="127.0.0.1:8080")
    p.add_argument("--embed-dim", type=int, default=384)
    p.add_argument("--embeddings")
    p.add_argument("--t-max", type=int, default=3)
    p.add_argument("--max-inflight", type=int, default=32)

    p = sub.add_parser("render-prompt", help="render the generator prompt", parents=[common])
    p.add_argument("--mode", choices=["with_knowledge", "internal_only"], required=True)
    p.add_argument("--history-file", help="one history turn per line")
    p.add_argument("--pool-file", help="one knowledge text per line")
    subparsers = {name: sp for name, sp in sub.choices.items()}
    return parser, subparsers


def _provider(args):
    if getattr(args, "embeddings", None):
        return FileBackedProvider.from_jsonl(args.embeddings)
    return HashedBowProvider(dim=getattr(args, "embed_dim", 384))


def _load_kb_graph(kb_path: str, kind: str | None):
    if kind is None:
        kind = "triple" if kb_path.endswith((".tsv", ".txt")) else "document"
    if kind == "document":
        return graph_mod.unify_documents(corpus_mod.parse_document_kb(kb_path))
    return graph_mod.unify_triples(corpus_mod.parse_triple_kb(kb_path))


def _read_lines(path: str | None) -> list[str]:
    if not path:
        return []
    return [line for line in Path(path).read_text(encoding="utf-8").split("\n") if line.strip()]


def _cmd_synth(args) -> int:
    cfg = corpus_mod.SynthConfig(
        seed=args.seed,
        mode=args.mode,
        n_topics=args.n_topics,
        n_titles_per_topic=args.n_titles,
        n_sentences_per_title=args.n_sentences,
        n_entities=args.n_entities,
        n_relations=args.n_relations,
        branching=args.branching,
        n_dialogues=args.n_dialogues,
        vocab_size=args.vocab_size,
        path_length=args.path_length,
    )
    kb, samples = corpus_mod.gen_synthetic(cfg)
    if args.mode == "document":
        Path(args.out_kb).write_text(corpus_mod.serialize_document_kb(kb), encoding="utf-8")
    else:
        Path(args.out_kb).write_text(corpus_mod.serialize_triple_kb(kb), encoding="utf-8")
    Path(args.out_corpus).write_text(corpus_mod.serialize_dialogue_corpus(samples), encoding="utf-8")
    print(f"wrote {args.out_kb} and {args.out_corpus} ({len(samples)} dialogues)")
    return 0


def _cmd_unify(args) -> int:
    graph = _load_kb_graph(args.kb, args.kind)
    problems = graph_mod.validate(graph)
    if problems:
        for msg in problems:
            print(f"invalid: {msg}", file=sys.stderr)
        return 2
    graph_mod.save_graph(graph, args.out)
    print(
        f"wrote {args.out}: {len(graph.process_nodes)} process nodes, "
        f"{len(graph.knowledge_nodes)} knowledge nodes, {len(graph.edges)} edges"
    )
    return 0


def _cmd_train(args) -> int:
    if not args.graph and not args.kb:
        raise ValidationError("train needs --graph or --kb")
    graph = graph_mod.load_graph(args.graph) if args.graph else _load_kb_graph(args.kb, args.kind)
    samples = corpus_mod.parse_dialogue_corpus(args.corpus)
    problems = graph_mod.verify_corpus(graph, samples)
    if problems:
        for msg in problems:
            print(f"corpus mismatch: {msg}", file=sys.stderr)
        return 2
    provider = _provider(args)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        rollouts_per_sample=args.rollouts,
        max_lr=args.lr,
        warmup_frac=args.warmup_frac,
        weight_decay=args.weight_decay,
        seed=args.seed,
        use_walk_loss=not args.no_walk_loss,
        use_node_loss=not args.no_node_loss,
        use_knowledge_loss=not args.no_knowledge_loss,
        precision=args.precision,
        holdout_frac=args.holdout_frac,
        dims=Dims(d_in=provider.dim, d_state=args.d_state, d_hidden=args.d_hidden, heads=args.heads),
        selector=SelectorConfig(
            t_max=args.t_max, traversal="sampled", use_node_attention=not args.no_node_attention
        ),
        reward=RewardConfig(alpha=args.alpha),
    )
    params, report = train(graph, samples, provider, config, report_path=args.report)
    save_params(params, args.out)
    if report.epochs:
        last = report.epochs[-1]
        print(
            f"trained {args.epochs} epochs: r@1={last['r_at_1']:.3f} "
            f"reward={last['reward_mean']:.3f} pool={last['pool_mean']:.1f}"
        )
    if report.aborted:
        print(f"aborted: {report.abort_reason}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


def _selector_config(args) -> SelectorConfig:
    fixed = getattr(args, "fixed_pool", None)
    return SelectorConfig(
        t_max=getattr(args, "t_max", 3),
        pool_mode="fixed" if fixed else "adaptive",
        fixed_k=fixed or 10,
        use_node_attention=not getattr(args, "no_node_attention", False),
    )


def _cmd_eval(args) -> int:
    graph = graph_mod.load_graph(args.graph)
    params = load_params(args.ckpt)
    samples = corpus_mod.parse_dialogue_corpus(args.corpus)
    provider = _provider(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    ks = [int(k) for k in args.ks.split(",") if k.strip()]
    report = eval_mod.run_eval(
        graph, samples, params, provider, seeds, ks=ks, selector_config=_selector_config(args)
    )
    for name, method in report.methods.items():
        cells = "  ".join(f"R@{k}={method.mean[k]:.4f}+/-{method.std[k]:.4f}" for k in ks)
        print(f"{name:9s} {cells}")
    print(f"mean pool size {report.mean_pool_size:.2f}, gold in pool {report.gold_in_pool_rate:.3f}")
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
        print(f"wrote {args.out}")
    return 0


def _cmd_select(args) -> int:
    graph = graph_mod.load_graph(args.graph)
    params = load_params(args.ckpt)
    provider = _provider(args)
    sample = corpus_mod.DialogueSample(
        id="cli",
        history=tuple(args.turn),
        utterance=args.utterance,
        gold_knowledge=("-",),
        start_node=args.start_node,
    )
    result = select(graph, sample, provider, params, _selector_config(args))
    print(result.to_json(graph))
    return 0


def _cmd_serve(args) -> int:
    graph = graph_mod.load_graph(args.graph)
    params = load_params(args.ckpt)
    provider = _provider(args)
    bundle = RuntimeBundle.build(graph, params, provider, _selector_config(args))
    host, _, port = args.bind.partition(":")
    print(f"serving on {host}:{port}")
    serve(bundle, host=host or "127.0.0.1", port=int(port or 8080))
    return 0


def _cmd_render(args) -> int:
    history = _read_lines(args.history_file)
    pool = _read_lines(args.pool_file)
    sys.stdout.write(render_prompt(history, pool, args.mode))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "unify": _cmd_unify,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "select": _cmd_select,
    "serve": _cmd_serve,
    "render-prompt": _cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = _build_parser()
    try:
        config_path = None
        if "--config" in argv:
            idx = argv.index("--config")
            if idx + 1 >= len(argv):
                raise _UsageExit("--config needs a path")
            config_path = argv[idx + 1]
        elif os.environ.get(CONFIG_ENV_VAR):
            config_path = os.environ[CONFIG_ENV_VAR]
        if config_path:
            defaults = parse_config_file(config_path)
            parser.set_defaults(**defaults)
            for sp in subparsers.values():
                sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageExit as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KgateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
