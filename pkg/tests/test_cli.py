import json

import pytest

from dear import make_benchmark_fixture, read_examples, read_run
from dear.cli import main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("cli-data")
    fixture = make_benchmark_fixture(n_queries=8, n_docs=100, seed=0)
    fixture.write(directory)
    return directory


def _paths(data_dir):
    return {
        "corpus": str(data_dir / "corpus.jsonl"),
        "queries": str(data_dir / "queries.jsonl"),
        "qrels": str(data_dir / "qrels.txt"),
    }


# --- exit codes -------------------------------------------------------------------

def test_unknown_flag_exits_2(data_dir):
    with pytest.raises(SystemExit) as exc_info:
        main(["index", "--corpus", "x", "--frobnicate"])
    assert exc_info.value.code == 2


def test_missing_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc_info:
        main([])
    assert exc_info.value.code == 2


def test_missing_file_exits_2(tmp_path, capsys):
    code = main(["index", "--corpus", str(tmp_path / "ghost.jsonl")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_backend_failure_exits_3(data_dir, tmp_path, http_server, capsys):
    p = _paths(data_dir)
    run_path = tmp_path / "run.bm25"
    assert main(["retrieve", "--corpus", p["corpus"], "--queries",
                 p["queries"], "--out", str(run_path)]) == 0

    http_server.set_default(404, {"error": "nope"})
    code = main(["rerank", "--stage", "pointwise", "--scorer", "remote",
                 "--url", http_server.url, "--corpus", p["corpus"],
                 "--queries", p["queries"], "--run", str(run_path),
                 "--out", str(tmp_path / "run.dearp")])
    assert code == 3
    assert "backend error" in capsys.readouterr().err


def test_corrupt_run_file_exits_4(data_dir, tmp_path, capsys):
    p = _paths(data_dir)
    bad_run = tmp_path / "bad.run"
    bad_run.write_text("q1 Q0 d1 1 not-a-score tag\n")
    code = main(["eval", "--run", str(bad_run), "--qrels", p["qrels"]])
    assert code == 4
    assert "data error" in capsys.readouterr().err


def test_bad_cutoffs_exit_2(data_dir, tmp_path, capsys):
    p = _paths(data_dir)
    run_path = tmp_path / "run.bm25"
    main(["retrieve", "--corpus", p["corpus"], "--queries", p["queries"],
          "--out", str(run_path)])
    code = main(["eval", "--run", str(run_path), "--qrels", p["qrels"],
                 "--ndcg-cutoffs", "zero"])
    assert code == 2


# --- happy-path command chain -------------------------------------------------------

def test_full_command_chain(data_dir, tmp_path, capsys):
    p = _paths(data_dir)

    assert main(["index", "--corpus", p["corpus"],
                 "--out", str(tmp_path / "stats.json")]) == 0
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["documents"] == 100
    assert stats["avg_doc_length"] > 0

    run_bm25 = tmp_path / "run.bm25"
    assert main(["retrieve", "--corpus", p["corpus"], "--queries",
                 p["queries"], "--top-k", "50", "--out", str(run_bm25)]) == 0
    assert len(read_run(run_bm25)) == 8

    model = tmp_path / "student.json"
    assert main(["train", "--corpus", p["corpus"], "--queries", p["queries"],
                 "--qrels", p["qrels"], "--negatives", "5",
                 "--model-out", str(model),
                 "--report-out", str(tmp_path / "train.json")]) == 0
    assert set(json.loads(model.read_text())) == {
        "weights", "feature_means", "feature_stds"}
    out = capsys.readouterr().out
    assert "trained on" in out

    run_dearp = tmp_path / "run.dearp"
    assert main(["rerank", "--stage", "pointwise", "--scorer", "linear",
                 "--model", str(model), "--corpus", p["corpus"],
                 "--queries", p["queries"], "--run", str(run_bm25),
                 "--out", str(run_dearp)]) == 0
    dearp = read_run(run_dearp)
    assert len(dearp) == 8

    run_dearl = tmp_path / "run.dearl"
    assert main(["rerank", "--stage", "listwise", "--backend", "oracle",
                 "--qrels", p["qrels"], "--corpus", p["corpus"],
                 "--queries", p["queries"], "--run", str(run_dearp),
                 "--listwise-k", "20", "--window", "10", "--stride", "5",
                 "--out", str(run_dearl)]) == 0
    dearl = read_run(run_dearl)
    assert {r.query_id for r in dearl} == {r.query_id for r in dearp}
    for before, after in zip(dearp, dearl):
        assert sorted(before.doc_ids()) == sorted(after.doc_ids())

    assert main(["eval", "--run", str(run_dearl), "--qrels", p["qrels"],
                 "--queries", p["queries"], "--corpus", p["corpus"],
                 "--json-out", str(tmp_path / "eval.json")]) == 0
    table = capsys.readouterr().out
    assert "nDCG@10" in table
    assert "Top-1" in table
    payload = json.loads((tmp_path / "eval.json").read_text())
    # oracle listwise over a 20-doc head of graded docs is a perfect ranking
    assert payload["mean_ndcg"]["10"] == pytest.approx(1.0)


def test_synthgen_command(data_dir, tmp_path, capsys):
    p = _paths(data_dir)
    out = tmp_path / "examples.jsonl"
    assert main(["synthgen", "--corpus", p["corpus"], "--queries",
                 p["queries"], "--qrels", p["qrels"], "--backend", "oracle",
                 "--target-count", "4", "--per-query-candidates", "6",
                 "--teacher-model", "oracle-v0", "--out", str(out)]) == 0
    examples = read_examples(out)
    assert len(examples) == 4
    assert all(e.teacher_model == "oracle-v0" for e in examples)
    report = json.loads(capsys.readouterr().out.split("wrote")[0])
    assert report["accepted"] == 4
    assert report["rejected_repairs"] == 0


def test_sweep_alpha_command(data_dir, tmp_path, capsys):
    p = _paths(data_dir)
    out = tmp_path / "sweep.csv"
    assert main(["sweep-alpha", "--corpus", p["corpus"], "--queries",
                 p["queries"], "--qrels", p["qrels"], "--negatives", "5",
                 "--epochs", "1", "--alphas", "0,0.5,1",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "alpha,ndcg10"
    assert len(lines) == 4
    assert [l.split(",")[0] for l in lines[1:]] == ["0", "0.5", "1"]

    assert main(["sweep-alpha", "--corpus", p["corpus"], "--queries",
                 p["queries"], "--qrels", p["qrels"], "--alphas", "2",
                 "--out", str(out)]) == 2


def test_pipeline_command_with_overrides(data_dir, tmp_path, capsys):
    p = _paths(data_dir)
    toml = tmp_path / "pipeline.toml"
    toml.write_text(f"""
[data]
corpus = "{p['corpus']}"
queries = "{p['queries']}"
qrels = "{p['qrels']}"

[pipeline]
output_dir = "{tmp_path}/ignored"
first_stage_top_k = 50
listwise_k = 20

[pointwise]
type = "planted"

[listwise]
type = "identity"
""")
    out_dir = tmp_path / "actual"
    assert main(["pipeline", "--config", str(toml),
                 "--output-dir", str(out_dir), "--workers", "2"]) == 0
    assert (out_dir / "run.bm25").exists()
    assert (out_dir / "run.dearp").exists()
    assert (out_dir / "run.dearl").exists()
    assert (out_dir / "report.json").exists()
    assert not (tmp_path / "ignored").exists()
    printed = capsys.readouterr().out
    assert "[dearp]" in printed
    assert "report:" in printed


def test_pipeline_command_bad_config_exits_2(tmp_path, capsys):
    toml = tmp_path / "broken.toml"
    toml.write_text("[data]\ncorpus = \"only\"\n")
    assert main(["pipeline", "--config", str(toml)]) == 2
    assert "config error" in capsys.readouterr().err
