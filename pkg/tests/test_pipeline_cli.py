import json
import os

import pytest

from corpus_factory import (
    item_code,
    make_fact_bundle,
    make_visual_bundle,
    qa_row,
    question_for,
    write_bundle,
    write_dataset,
)
from helpers import make_gateway
from wire_mock import MockModelServer

from mldoc.cli import main
from mldoc.pipeline import load_store_graph, run_build, run_stats

pytestmark = pytest.mark.usefixtures("mock_env")


@pytest.fixture
def mock_env(mock_server, monkeypatch):
    monkeypatch.setenv("MLDOC_EMBED_URL", mock_server.base_url)
    monkeypatch.setenv("MLDOC_LVLM_URL", mock_server.base_url)
    monkeypatch.setenv("MLDOC_JUDGE_URL", mock_server.base_url)
    monkeypatch.delenv("MLDOC_API_KEY", raising=False)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def stdout_json(out: str):
    return json.loads(out)


def fact_bundle_file(tmp_path, doc_id="cli-doc", tag="F", n_items=30) -> str:
    return write_bundle(
        str(tmp_path / "input" / f"{doc_id}.json"),
        make_fact_bundle(doc_id, tag, n_items),
    )


def ingest_args(bundle_path, store, window=40, overlap=8):
    return (
        "ingest", "--input", bundle_path, "--store", store,
        "--max-window", str(window), "--overlap", str(overlap),
    )


@pytest.fixture
def built_store(tmp_path, capsys):
    """Fact corpus taken through ingest, generate, build."""
    store = str(tmp_path / "store")
    bundle = fact_bundle_file(tmp_path)
    assert run_cli(capsys, *ingest_args(bundle, store))[0] == 0
    assert run_cli(capsys, "generate", "--store", store)[0] == 0
    assert run_cli(capsys, "build", "--store", store)[0] == 0
    return store


# ---------------------------------------------------------------------------
# argument handling

def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["query", "--store", "s"])  # --q is required
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--store", "s", "--dataset", "d", "--out", "o", "--method", "tfidf"])
    assert exc.value.code == 2


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "ingest" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# ingest

def test_ingest_reports_and_reruns_byte_identical(tmp_path, capsys):
    store = str(tmp_path / "store")
    bundle = fact_bundle_file(tmp_path, n_items=250)  # 3 pages at 100 per page
    code, out, _ = run_cli(capsys, *ingest_args(bundle, store))
    assert code == 0
    report = stdout_json(out)
    assert report["doc_id"] == "cli-doc"
    assert report["documents"] == 1
    assert report["chunks"] > 0

    chunks_path = os.path.join(store, "chunks.jsonl")
    first = open(chunks_path, "rb").read()
    code, out2, _ = run_cli(capsys, *ingest_args(bundle, store))
    assert code == 0
    assert out2 == out
    assert open(chunks_path, "rb").read() == first


def test_ingest_two_documents_accumulate(tmp_path, capsys):
    store = str(tmp_path / "store")
    a = fact_bundle_file(tmp_path, doc_id="doc-a", tag="A")
    b = fact_bundle_file(tmp_path, doc_id="doc-b", tag="B")
    run_cli(capsys, *ingest_args(a, store))
    code, out, _ = run_cli(capsys, *ingest_args(b, store))
    assert code == 0
    assert stdout_json(out)["documents"] == 2


def test_ingest_missing_input_exits_1(tmp_path, capsys):
    code, _, err = run_cli(
        capsys, "ingest", "--input", str(tmp_path / "ghost.json"), "--store", str(tmp_path / "s")
    )
    assert code == 1
    envelope = json.loads(err)
    assert envelope["error"]["code"] == "invalid_input"


def test_ingest_invalid_chunking_exits_1(tmp_path, capsys):
    bundle = fact_bundle_file(tmp_path)
    code, _, err = run_cli(
        capsys, "ingest", "--input", bundle, "--store", str(tmp_path / "s"),
        "--max-window", "100", "--overlap", "100",
    )
    assert code == 1
    assert json.loads(err)["error"]["code"] == "configuration"


# ---------------------------------------------------------------------------
# generate / build error paths

def test_generate_without_endpoints_exits_1(tmp_path, capsys, monkeypatch):
    for var in ("MLDOC_EMBED_URL", "MLDOC_LVLM_URL", "MLDOC_JUDGE_URL"):
        monkeypatch.delenv(var, raising=False)
    store = str(tmp_path / "store")
    run_cli(capsys, *ingest_args(fact_bundle_file(tmp_path), store))
    code, _, err = run_cli(capsys, "generate", "--store", store)
    assert code == 1
    assert json.loads(err)["error"]["code"] == "configuration"


def test_generate_before_ingest_exits_3(tmp_path, capsys):
    code, _, err = run_cli(capsys, "generate", "--store", str(tmp_path / "nostore"))
    assert code == 3
    assert json.loads(err)["error"]["code"] == "store_missing"


def test_query_before_build_exits_3(tmp_path, capsys):
    code, _, err = run_cli(capsys, "query", "--store", str(tmp_path / "nostore"), "--q", "هello?")
    assert code == 3
    assert json.loads(err)["error"]["code"] == "store_missing"


# ---------------------------------------------------------------------------
# full flow

def test_generate_and_build_reports(built_store, capsys):
    stats = run_stats(built_store)
    assert stats["counts"]["chunks"] > 0
    assert stats["counts"]["queries"] > 0
    assert stats["params"]["k"] == 3
    assert stats["params"]["repr"] == "query_plus_answer"
    assert stats["params"]["dim"] == 32

    report = json.load(open(os.path.join(built_store, "build_report.json")))
    assert report["chunks_dropped"] == []
    assert report["queries_kept"] == report["queries_total"]
    assert report["filter_enabled"] is True


def test_query_output_shape_and_determinism(built_store, capsys):
    args = ("query", "--store", built_store, "--q", "What is the code of item F0003?",
            "--alpha", "1.0", "--topk", "3")
    code, out, _ = run_cli(capsys, *args)
    assert code == 0
    result = stdout_json(out)
    assert result["query"] == "What is the code of item F0003?"
    assert result["entry_nodes"]
    assert len(result["ranked"]) <= 3
    for rc in result["ranked"]:
        assert set(rc) == {"chunk_id", "score", "supporters"}

    code, out2, _ = run_cli(capsys, *args)
    assert code == 0
    assert out2 == out


def test_answer_output_shape(built_store, capsys):
    code, out, _ = run_cli(
        capsys, "answer", "--store", built_store, "--q", "What is the code of item F0003?",
        "--alpha", "1.0",
    )
    assert code == 0
    result = stdout_json(out)
    assert set(result) == {"answer", "final_answer", "context"}
    assert isinstance(result["final_answer"], str) and result["final_answer"]
    assert result["context"]


def test_answer_page_context_without_renders_exits_1(built_store, capsys):
    code, _, err = run_cli(
        capsys, "answer", "--store", built_store, "--q", "What is the code of item F0003?",
        "--alpha", "1.0", "--page-context",
    )
    assert code == 1
    assert json.loads(err)["error"]["code"] == "configuration"


def eval_dataset(tmp_path, n=3) -> str:
    rows = [qa_row(question_for("F", i), item_code("F", i), "cli-doc") for i in range(n)]
    rows.append(qa_row("What is the code of item ZZZZ9?", "Not answerable", "cli-doc",
                       scope="unanswerable", sources=()))
    return write_dataset(str(tmp_path / "qa.jsonl"), rows)


@pytest.mark.parametrize("method", ["mcqg", "bm25", "dense"])
def test_eval_methods_produce_reports(built_store, tmp_path, capsys, method):
    dataset = eval_dataset(tmp_path)
    out_path = str(tmp_path / f"report_{method}.json")
    code, out, _ = run_cli(
        capsys, "eval", "--store", built_store, "--dataset", dataset,
        "--method", method, "--out", out_path, "--alpha", "1.0",
    )
    assert code == 0
    report = stdout_json(out)
    assert set(report) == {"overall", "by_source", "by_scope", "n", "excluded"}
    assert 0.0 <= report["overall"] <= 1.0
    assert report["n"] == 4
    assert report["excluded"] == 0
    assert json.load(open(out_path)) == report


def test_eval_missing_dataset_exits_1(built_store, tmp_path, capsys):
    code, _, err = run_cli(
        capsys, "eval", "--store", built_store, "--dataset", str(tmp_path / "ghost.jsonl"),
        "--out", str(tmp_path / "r.json"),
    )
    assert code == 1
    assert json.loads(err)["error"]["code"] == "invalid_input"


def test_eval_is_deterministic(built_store, tmp_path, capsys):
    dataset = eval_dataset(tmp_path, n=2)
    args = ("eval", "--store", built_store, "--dataset", dataset,
            "--out", str(tmp_path / "r.json"), "--alpha", "1.0")
    _, out1, _ = run_cli(capsys, *args)
    _, out2, _ = run_cli(capsys, *args)
    assert out1 == out2


# ---------------------------------------------------------------------------
# sweep

def test_sweep_writes_csv_and_reruns_identically(built_store, tmp_path, capsys):
    dataset = eval_dataset(tmp_path, n=2)
    grid_path = tmp_path / "grid.json"
    grid_path.write_text(json.dumps({"h_values": [0, 1], "alpha_values": [1.0]}))
    out_csv = str(tmp_path / "sweep.csv")

    code, out, _ = run_cli(
        capsys, "sweep", "--store", built_store, "--grid", str(grid_path),
        "--dataset", dataset, "--out", out_csv,
    )
    assert code == 0
    assert stdout_json(out) == {"points": 2, "out": out_csv}

    lines = open(out_csv, encoding="utf-8").read().splitlines()
    assert len(lines) == 3
    header = lines[0].split(",")
    assert header[:10] == ["h", "k", "n", "alpha", "K", "agg", "repr", "overall", "n_rows", "excluded"]
    assert "src_TXT" in header
    assert "scope_single" in header and "scope_unanswerable" in header
    assert lines[1].split(",")[0] == "0"
    assert lines[2].split(",")[0] == "1"

    first = open(out_csv, "rb").read()
    run_cli(capsys, "sweep", "--store", built_store, "--grid", str(grid_path),
            "--dataset", dataset, "--out", out_csv)
    assert open(out_csv, "rb").read() == first


def test_sweep_cap_exceeded_exits_1(built_store, tmp_path, capsys):
    dataset = eval_dataset(tmp_path, n=1)
    grid_path = tmp_path / "grid.json"
    grid_path.write_text(json.dumps({"h_values": [0, 1, 2]}))
    code, _, err = run_cli(
        capsys, "sweep", "--store", built_store, "--grid", str(grid_path),
        "--dataset", dataset, "--out", str(tmp_path / "s.csv"), "--cap", "2",
    )
    assert code == 1
    assert json.loads(err)["error"]["code"] == "configuration"


# ---------------------------------------------------------------------------
# visual filtering through the pipeline

def visual_store(tmp_path, capsys, server, monkeypatch):
    monkeypatch.setenv("MLDOC_EMBED_URL", server.base_url)
    monkeypatch.setenv("MLDOC_LVLM_URL", server.base_url)
    monkeypatch.setenv("MLDOC_JUDGE_URL", server.base_url)
    root = str(tmp_path / "visual_src")
    bundle, labels = make_visual_bundle(root)
    bundle_path = write_bundle(os.path.join(root, "visdoc.json"), bundle)
    store = str(tmp_path / "visual_store")
    assert run_cli(capsys, *ingest_args(bundle_path, store, window=1200, overlap=100))[0] == 0
    assert run_cli(capsys, "generate", "--store", store)[0] == 0
    return store, labels


def test_build_drops_labeled_noise(tmp_path, capsys, monkeypatch):
    with MockModelServer() as fallback_server:
        store, labels = visual_store(tmp_path, capsys, fallback_server, monkeypatch)
    with MockModelServer(image_labels=labels) as server:
        gateway = make_gateway(server.base_url)
        report = run_build(store, gateway)
    assert report["filter_enabled"] is True
    assert len(report["chunks_dropped"]) == 1
    graph = load_store_graph(store)
    assert report["chunks_total"] - report["chunks_kept"] == 1
    dropped_id = report["chunks_dropped"][0]
    assert dropped_id not in graph.chunks
    kept_texts = {c.text_content for c in graph.chunks.values()}
    assert "Company logo" not in kept_texts
    assert any("Figure 1" in t for t in kept_texts)
    assert any("| region | total |" in t for t in kept_texts)
    # nodes anchored to the dropped chunk are gone too
    assert all(n.chunk_id in graph.chunks for n in graph.queries.values())


def test_build_no_filter_keeps_everything(tmp_path, capsys, monkeypatch):
    with MockModelServer() as seed_server:
        store, labels = visual_store(tmp_path, capsys, seed_server, monkeypatch)
    with MockModelServer(image_labels=labels) as server:
        monkeypatch.setenv("MLDOC_EMBED_URL", server.base_url)
        monkeypatch.setenv("MLDOC_LVLM_URL", server.base_url)
        monkeypatch.setenv("MLDOC_JUDGE_URL", server.base_url)
        code, out, _ = run_cli(capsys, "build", "--store", store, "--no-filter")
    assert code == 0
    report = stdout_json(out)
    assert report["filter_enabled"] is False
    assert report["chunks_dropped"] == []
    assert report["chunks_kept"] == report["chunks_total"]
    graph = load_store_graph(store)
    assert "Company logo" in {c.text_content for c in graph.chunks.values()}
