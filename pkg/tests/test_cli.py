import json
import os
from pathlib import Path

import pytest

from kgate.cli import main, parse_config_file
from kgate.errors import ParseError
from kgate.prompts import render_prompt
from kgate.selector import clear_caches


@pytest.fixture(autouse=True)
def fresh_caches():
    clear_caches()
    yield
    clear_caches()


@pytest.fixture
def workspace(tmp_path):
    kb = tmp_path / "kb.json"
    corpus = tmp_path / "corpus.jsonl"
    graph = tmp_path / "graph.json"
    assert main([
        "synth", "--mode", "document", "--seed", "5",
        "--out-kb", str(kb), "--out-corpus", str(corpus),
        "--n-topics", "3", "--n-titles", "1", "--n-sentences", "5",
        "--n-dialogues", "10", "--vocab-size", "80",
    ]) == 0
    assert main(["unify", "--kb", str(kb), "--kind", "document", "--out", str(graph)]) == 0
    return tmp_path, kb, corpus, graph


def train_quick(workspace, extra=()):
    tmp_path, kb, corpus, graph = workspace
    ckpt = tmp_path / "model.json"
    code = main([
        "train", "--corpus", str(corpus), "--graph", str(graph), "--out", str(ckpt),
        "--epochs", "2", "--batch-size", "4", "--rollouts", "1", "--embed-dim", "32",
        "--d-state", "32", "--d-hidden", "16", "--heads", "2", "--holdout-frac", "0.2",
        *extra,
    ])
    assert code == 0
    return ckpt


class TestSynthUnify:
    def test_outputs_exist(self, workspace):
        tmp_path, kb, corpus, graph = workspace
        assert kb.exists() and corpus.exists() and graph.exists()
        payload = json.loads(graph.read_text())
        assert payload["kind"] == "document"

    def test_synth_deterministic(self, tmp_path):
        args = lambda stem: [
            "synth", "--seed", "9", "--out-kb", str(tmp_path / f"{stem}.json"),
            "--out-corpus", str(tmp_path / f"{stem}.jsonl"), "--n-dialogues", "5",
        ]
        assert main(args("a")) == 0
        assert main(args("b")) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_triple_mode(self, tmp_path):
        kb = tmp_path / "kb.tsv"
        corpus = tmp_path / "c.jsonl"
        graph = tmp_path / "g.json"
        assert main(["synth", "--mode", "triple", "--out-kb", str(kb), "--out-corpus", str(corpus),
                     "--n-entities", "10", "--n-dialogues", "5"]) == 0
        assert main(["unify", "--kb", str(kb), "--out", str(graph)]) == 0  # kind inferred from .tsv
        assert json.loads(graph.read_text())["kind"] == "triple"


class TestTrainEvalSelect:
    def test_train_writes_checkpoint_and_report(self, workspace, tmp_path):
        report = tmp_path / "report.jsonl"
        ckpt = train_quick(workspace, extra=["--report", str(report)])
        assert ckpt.exists()
        records = [json.loads(line) for line in report.read_text().strip().split("\n")]
        assert len(records) == 2
        assert "r_at_1" in records[0]

    def test_ablation_flag_changes_training(self, workspace, tmp_path):
        tmp_path_, kb, corpus, graph = workspace
        r1 = tmp_path / "r1.jsonl"
        r2 = tmp_path / "r2.jsonl"
        train_quick(workspace, extra=["--report", str(r1)])
        train_quick(workspace, extra=["--report", str(r2), "--no-walk-loss"])
        rec1 = json.loads(r1.read_text().strip().split("\n")[-1])
        rec2 = json.loads(r2.read_text().strip().split("\n")[-1])
        assert rec2["l_walk"] == 0.0
        assert rec1["l_walk"] != 0.0

    def test_eval_and_fixed_pool(self, workspace, tmp_path):
        tmp_path_, kb, corpus, graph = workspace
        ckpt = train_quick(workspace)
        out = tmp_path / "eval.json"
        code = main([
            "eval", "--graph", str(graph), "--ckpt", str(ckpt), "--corpus", str(corpus),
            "--seeds", "0,1", "--ks", "1,5", "--embed-dim", "32", "--out", str(out),
        ])
        assert code == 0
        payload = json.loads(out.read_text())
        assert set(payload["methods"]) == {"selector", "semantic", "random"}
        code = main([
            "eval", "--graph", str(graph), "--ckpt", str(ckpt), "--corpus", str(corpus),
            "--seeds", "0", "--embed-dim", "32", "--fixed-pool", "3", "--out", str(out),
        ])
        assert code == 0
        assert json.loads(out.read_text())["mean_pool_size"] <= 3.0

    def test_select_outputs_json(self, workspace, capsys):
        tmp_path, kb, corpus, graph = workspace
        ckpt = train_quick(workspace)
        sample = json.loads(Path(corpus).read_text().split("\n")[0])
        capsys.readouterr()  # drop training output
        code = main([
            "select", "--graph", str(graph), "--ckpt", str(ckpt),
            "--utterance", sample["utterance"], "--embed-dim", "32",
            "--start-node", sample["start_node"],
        ])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["pool_size"] >= 1
        assert payload["halt_node"]


class TestRenderPrompt:
    def test_matches_library(self, tmp_path, capsys):
        history = tmp_path / "history.txt"
        pool = tmp_path / "pool.txt"
        history.write_text("turn one\nturn two\n")
        pool.write_text("fact a\nfact b\n")
        code = main(["render-prompt", "--mode", "with_knowledge",
                     "--history-file", str(history), "--pool-file", str(pool)])
        assert code == 0
        out = capsys.readouterr().out
        assert out == render_prompt(["turn one", "turn two"], ["fact a", "fact b"], "with_knowledge")

    def test_missing_pool_is_data_error(self, tmp_path):
        history = tmp_path / "history.txt"
        history.write_text("hi\n")
        code = main(["render-prompt", "--mode", "with_knowledge", "--history-file", str(history)])
        assert code == 2


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self):
        assert main(["synth", "--bogus-flag", "x"]) == 1

    def test_unknown_command_is_usage_error(self):
        assert main(["frobnicate"]) == 1

    def test_missing_file_is_data_error(self, tmp_path):
        assert main(["unify", "--kb", str(tmp_path / "missing.json"), "--out", str(tmp_path / "g.json")]) == 2

    def test_malformed_kb_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert main(["unify", "--kb", str(bad), "--kind", "document", "--out", str(tmp_path / "g.json")]) == 2


class TestConfigFile:
    def test_parse_types(self, tmp_path):
        cfg = tmp_path / "cfg"
        cfg.write_text('# comment\nepochs = 3\nlr = 0.005\nmode = "document"\nno-walk-loss = true\n')
        values = parse_config_file(cfg)
        assert values == {"epochs": 3, "lr": 0.005, "mode": "document", "no_walk_loss": True}

    def test_bad_line_reports_position(self, tmp_path):
        cfg = tmp_path / "cfg"
        cfg.write_text("epochs = 1\njust words\n")
        with pytest.raises(ParseError) as exc:
            parse_config_file(cfg)
        assert exc.value.line == 2

    def test_config_supplies_defaults_flags_override(self, tmp_path, capsys):
        cfg = tmp_path / "cfg"
        cfg.write_text("n-dialogues = 7\n")
        kb, corpus = tmp_path / "kb.json", tmp_path / "c.jsonl"
        assert main(["--config", str(cfg), "synth", "--out-kb", str(kb), "--out-corpus", str(corpus)]) == 0
        assert len(corpus.read_text().strip().split("\n")) == 7
        assert main(["--config", str(cfg), "synth", "--out-kb", str(kb),
                     "--out-corpus", str(corpus), "--n-dialogues", "4"]) == 0
        assert len(corpus.read_text().strip().split("\n")) == 4

    def test_env_var_config(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg"
        cfg.write_text("n-dialogues = 6\n")
        kb, corpus = tmp_path / "kb.json", tmp_path / "c.jsonl"
        monkeypatch.setenv("GATE_CONFIG", str(cfg))
        assert main(["synth", "--out-kb", str(kb), "--out-corpus", str(corpus)]) == 0
        assert len(corpus.read_text().strip().split("\n")) == 6
