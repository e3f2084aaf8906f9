import json
from pathlib import Path

import pytest

from sgmatch.cli import build_parser, main, resolve
from sgmatch.graph import parse_text_graph

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_help(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0
    assert "usage" in out.lower()


def test_no_subcommand_is_usage_error(capsys):
    assert run(capsys)[0] == 1


def test_query_without_store(capsys, monkeypatch):
    monkeypatch.delenv("SG_STORE", raising=False)
    code, _, err = run(capsys, "query", "--model", "m.bin", "--manifest", "x.json", "--text", "a chair")
    assert code == 1
    assert "--store" in err


def test_unknown_flag_and_bad_values(capsys):
    assert run(capsys, "query", "--bogus")[0] == 1
    assert run(capsys, "eval", "--model", "m", "--manifest", "x", "--k", "one")[0] == 1
    assert run(capsys, "query", "--mode", "nearest", "--store", "s", "--model", "m", "--manifest", "x",
               "--text", "a")[0] == 1


def test_missing_file_is_runtime_error(capsys, tmp_path):
    code, _, err = run(capsys, "query", "--store", tmp_path / "nope.bin", "--model", tmp_path / "nope.bin",
                       "--manifest", tmp_path / "nope.json", "--text", "a chair")
    assert code == 2
    assert "error" in err


def test_precedence_flag_env_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tau": 0.5, "seed": 3, "mode": "match-prob", "k": "1,3"}))
    parser = build_parser()
    env = {"SG_SEED": "7", "SG_MODE": "ret-based"}
    args = resolve(parser.parse_args(["--config", str(cfg), "eval", "--seed", "11"]), env)
    assert args.seed == 11  # flag wins
    assert args.tau == 0.5  # config fills the rest
    assert args.k == [1, 3]
    args = resolve(parser.parse_args(["--config", str(cfg), "query"]), env)
    assert args.mode.value == "ret-based"  # env beats config
    args = resolve(parser.parse_args(["query"]), {})
    assert args.tau == 1.5 and args.mode.value == "cos-sim"


def test_extract_rules_to_stdout(capsys):
    code, out, _ = run(capsys, "extract", "--text", "A red lamp on a desk.")
    assert code == 0
    g = parse_text_graph(out)
    assert [n.label for n in g.nodes] == ["lamp", "desk"]


def test_extract_llm_needs_endpoint(capsys, monkeypatch):
    monkeypatch.delenv("SG_LLM_ENDPOINT", raising=False)
    code, _, err = run(capsys, "extract", "--llm", "--text", "a chair")
    assert code == 1 and "--llm-endpoint" in err


def test_ingest_3dssg_fixture(capsys, tmp_path):
    d = FIXTURES / "3dssg"
    code, out, _ = run(capsys, "ingest", "--objects", d / "objects.json", "--relationships",
                       d / "relationships.json", "--semseg", d / "semseg.v2.json", "--scan", "fixture-scan-01",
                       "--dim", 8, "--out-dir", tmp_path)
    assert code == 0
    report = json.loads(out)
    assert report["nodes"] == 12 and report["edges"] == 30
    assert report["edges_kept"] <= 30
    assert (tmp_path / "fixture-scan-01.json").exists()


def test_end_to_end(capsys, tmp_path):
    data, model, store = tmp_path / "data", tmp_path / "m.bin", tmp_path / "s.bin"
    assert run(capsys, "synth", "--out", data, "--num-scenes", 12, "--heldout", 1, "--seed", 4)[0] == 0
    manifest = data / "manifest.json"
    code, out, _ = run(capsys, "train", "--manifest", manifest, "--model", model, "--epochs", 2, "--dim", 32,
                       "--loss-curve", tmp_path / "curve.csv")
    assert code == 0 and len(json.loads(out)["epoch_losses"]) == 2
    code, out, _ = run(capsys, "embed", "--manifest", manifest, "--model", model, "--store", store)
    assert code == 0 and json.loads(out)["scenes"] == 12

    entry = json.loads(manifest.read_text())[2]
    true_scene = Path(entry["scene_graph_path"]).stem
    description = parse_text_graph((data / entry["text_graph_paths"][0]).read_bytes()).description
    for mode in ("cos-sim", "match-prob", "ret-based"):
        code, out, _ = run(capsys, "query", "--manifest", manifest, "--model", model, "--store", store,
                           "--text", description, "--mode", mode)
        assert code == 0
        ranked = [r["scene"] for r in json.loads(out)["ranked"]]
        assert true_scene in ranked and len(ranked) == 12

    eval_args = ["eval", "--manifest", manifest, "--queries", data / "heldout.json", "--model", model,
                 "--store", store, "--trials", 50, "--seed", 1]
    code, first, _ = run(capsys, *eval_args)
    assert code == 0
    assert first.splitlines()[0] == "Top k,1,2,3,5"
    assert [line.split(",")[0] for line in first.splitlines()[1:]] == ["match-prob", "cos-sim", "ret-based"]
    assert run(capsys, *eval_args)[1] == first

    code, out, _ = run(capsys, "bench", "--manifest", manifest, "--model", model, "--store", store,
                       "--repetitions", 1)
    report = json.loads(out)
    assert code == 0 and report["store_bytes"] == store.stat().st_size and report["median_query_seconds"] > 0


@pytest.mark.parametrize("sub", ["synth", "ingest", "extract", "train", "embed", "query", "eval", "bench"])
def test_subcommand_help(capsys, sub):
    assert run(capsys, sub, "--help")[0] == 0
