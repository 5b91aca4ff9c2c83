import json
import subprocess
import sys

import pytest

from attnrag.cli import main
from attnrag.graph import load_graph, load_subgraph


@pytest.fixture
def workspace(tmp_path):
    assert main(["gen", "--num-nodes", "40", "--num-edges", "90", "--dimension", "8",
                 "--gold-size", "3", "--num-queries", "2", "--seed", "4", "--out", str(tmp_path / "g")]) == 0
    return tmp_path


def g_args(ws):
    return ["--graph", str(ws / "g"), "--query", str(ws / "g" / "queries.jsonl")]


def test_retrieve_writes_valid_subgraph(workspace, capsys):
    out = workspace / "s.json"
    code = main(["retrieve", *g_args(workspace), "--k-nodes", "3", "--k-edges", "3", "--out", str(out)])
    assert code == 0
    assert capsys.readouterr().out == ""
    sub = load_subgraph(out)
    graph = load_graph(workspace / "g")
    sub.validate(graph)
    assert sub.parent == graph.identity
    assert 3 <= len(sub.node_ids) <= 9 and len(sub.edge_indices) >= 3


def test_retrieve_to_stdout_is_pure_json(workspace, capsys):
    assert main(["retrieve", *g_args(workspace), "--query-id", "q1", "--trace", str(workspace / "t.json")]) == 0
    cap = capsys.readouterr()
    doc = json.loads(cap.out)
    assert set(doc) >= {"graph", "nodes", "edges"}
    trace = json.loads((workspace / "t.json").read_text())
    assert set(trace["v_topk"]) <= set(doc["nodes"])


def test_missing_required_flag_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["retrieve", "--graph", "x"])
    assert exc.value.code == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--query" in err


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["textualize", "--graph", "g", "--subgraph", "s", "--bogus"]])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1
    assert capsys.readouterr().out == ""


def test_corrupt_nodes_exit_2(workspace, capsys):
    nodes = workspace / "g" / "nodes.jsonl"
    lines = nodes.read_text().splitlines()
    lines[6] = lines[6][:-5]
    nodes.write_text("\n".join(lines) + "\n")
    assert main(["retrieve", *g_args(workspace)]) == 2
    cap = capsys.readouterr()
    assert cap.out == ""
    assert "nodes.jsonl:7:" in cap.err


def test_unknown_query_id_exit_2(workspace, capsys):
    assert main(["retrieve", *g_args(workspace), "--query-id", "nope"]) == 2
    assert "nope" in capsys.readouterr().err


def test_bad_config_value_exit_2(workspace, capsys):
    assert main(["retrieve", *g_args(workspace), "--k-nodes", "-1"]) == 2


def test_pcst_textualize_encode_pipeline(workspace, capsys):
    s = workspace / "p.json"
    assert main(["pcst", *g_args(workspace), "--k-prize", "3", "--out", str(s)]) == 0
    doc = json.loads(s.read_text())
    assert doc["objective"] >= 3.0
    capsys.readouterr()
    assert main(["textualize", "--graph", str(workspace / "g"), "--subgraph", str(s)]) == 0
    text = capsys.readouterr().out
    assert text.endswith("\n") and "entity" in text
    assert main(["textualize", "--graph", str(workspace / "g"), "--subgraph", str(s), "--style", "lists"]) == 0
    assert capsys.readouterr().out.startswith("node_id,node_attr\n")
    params = workspace / "enc.bin"
    assert main(["encode", "--graph", str(workspace / "g"), "--subgraph", str(s), "--d-g", "8", "--d-llm", "6",
                 "--num-heads", "2", "--save-params", str(params)]) == 0
    emb = json.loads(capsys.readouterr().out)
    assert len(emb["projected"]) == 6 and len(emb["h_g"]) == 8
    assert main(["encode", "--graph", str(workspace / "g"), "--subgraph", str(s), "--params", str(params)]) == 0
    assert json.loads(capsys.readouterr().out) == emb


def test_bench_outputs(workspace, capsys):
    rep = workspace / "r.json"
    csv_path = workspace / "r.csv"
    assert main(["bench", *g_args(workspace), "--method", "attention", "--out", str(rep), "--csv", str(csv_path)]) == 0
    doc = json.loads(rep.read_text())
    assert set(doc["methods"]) == {"attention"}
    assert doc["methods"]["attention"]["queries"] == 2
    assert len(csv_path.read_text().splitlines()) == 3
    assert main(["bench", "--num-nodes", "200", "--num-edges", "500", "--num-queries", "2", "--jobs", "2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["mode"] == "parallel(jobs=2)" and set(doc["methods"]) == {"attention", "pcst"}


def run_all(root):
    """Every file-producing subcommand, writing into ``root``."""
    g = root / "g"
    q = g / "queries.jsonl"
    cmds = [
        ["gen", "--num-nodes", "60", "--num-edges", "150", "--dimension", "8", "--num-queries", "3",
         "--seed", "9", "--out", str(g)],
        ["retrieve", "--graph", str(g), "--query", str(q), "--threshold-node", "0.5", "--edge-policy", "selected",
         "--out", str(root / "a.json"), "--trace", str(root / "trace.json")],
        ["pcst", "--graph", str(g), "--query", str(q), "--out", str(root / "p.json")],
        ["textualize", "--graph", str(g), "--subgraph", str(root / "a.json"), "--out", str(root / "a.txt")],
        ["encode", "--graph", str(g), "--subgraph", str(root / "a.json"), "--d-g", "8", "--d-llm", "4",
         "--num-heads", "2", "--seed", "3", "--out", str(root / "e.json"), "--save-params", str(root / "e.bin")],
    ]
    for argv in cmds:
        assert main(argv) == 0, argv
    return sorted(p for p in root.rglob("*") if p.is_file())


def test_outputs_byte_identical(tmp_path):
    a = run_all(tmp_path / "a")
    b = run_all(tmp_path / "b")
    assert [p.relative_to(tmp_path / "a") for p in a] == [p.relative_to(tmp_path / "b") for p in b]
    assert len(a) == 10
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "attnrag", "gen", "--num-nodes", "5", "--num-edges", "4", "--dimension", "2",
         "--gold-size", "1", "--out", str(tmp_path / "g")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout == "" and "wrote" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "attnrag", "retrieve"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
