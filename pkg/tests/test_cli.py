import json

from main import main

SNAPSHOT_ARG = ["--snapshot-time", "2024-01-08T00:00:00Z"]


def generate(tmp_path, events: int = 6, followers: int = 3):
    corpus = tmp_path / "corpus.jsonl"
    truth = tmp_path / "truth.jsonl"
    code = main([
        "generate", "--events", str(events), "--followers", str(followers),
        "--out", str(corpus), "--truth", str(truth),
    ])
    assert code == 0
    return corpus, truth


def test_help_exits_cleanly() -> None:
    assert main(["run", "--help"]) == 0


def test_usage_errors_exit_with_one(tmp_path) -> None:
    assert main(["run", str(tmp_path / "corpus.jsonl"), "--no-such-flag"]) == 1
    assert main(["frobnicate"]) == 1
    assert main([]) == 1


def test_generate_writes_corpus_and_truth(tmp_path) -> None:
    corpus, truth = generate(tmp_path)
    assert len(corpus.read_text().splitlines()) == 24
    originals = [json.loads(line) for line in truth.read_text().splitlines() if json.loads(line)["original"]]
    assert len(originals) == 6


def test_run_creates_snapshot_directory(tmp_path) -> None:
    corpus, _ = generate(tmp_path)
    out = tmp_path / "out"
    timings = tmp_path / "timings.json"
    assert main(["run", str(corpus), "--outputs-dir", str(out), "--timings", str(timings)] + SNAPSHOT_ARG) == 0
    snapshot = out / "20240108T000000Z"
    assert (snapshot / "scores.jsonl").exists()
    assert "pagerank" in json.loads(timings.read_text())

    # a second run without --overwrite refuses to replace it
    assert main(["run", str(corpus), "--outputs-dir", str(out)] + SNAPSHOT_ARG) == 1
    assert main(["run", str(corpus), "--outputs-dir", str(out), "--overwrite"] + SNAPSHOT_ARG) == 0


def test_run_with_missing_corpus_is_a_validation_error(tmp_path) -> None:
    assert main(["run", str(tmp_path / "missing.jsonl"), "--outputs-dir", str(tmp_path)] + SNAPSHOT_ARG) == 1


def test_run_with_bad_config_is_a_validation_error(tmp_path) -> None:
    corpus, _ = generate(tmp_path)
    config = tmp_path / "config.yaml"
    config.write_text("damping: 1.5\n")
    assert main(["run", str(corpus), "--config", str(config), "--outputs-dir", str(tmp_path / "out")] + SNAPSHOT_ARG) == 1


def test_run_accepts_scientific_notation_in_yaml_config(tmp_path) -> None:
    corpus, _ = generate(tmp_path)
    config = tmp_path / "config.yaml"
    config.write_text("tolerance: 1e-10\nk: \"5\"\n")
    out = tmp_path / "out"
    assert main(["run", str(corpus), "--config", str(config), "--outputs-dir", str(out)] + SNAPSHOT_ARG) == 0
    saved = (out / "20240108T000000Z" / "config.yaml").read_text()
    assert "tolerance: 1.0e-10" in saved
    assert "k: 5" in saved


def test_series_writes_one_directory_per_tick(tmp_path) -> None:
    corpus, _ = generate(tmp_path)
    out = tmp_path / "series"
    code = main([
        "series", str(corpus), "--outputs-dir", str(out),
        "--start", "2024-01-07T22:00:00Z", "--end", "2024-01-08T00:00:00Z",
    ])
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "20240107T220000Z", "20240107T230000Z", "20240108T000000Z", "series.jsonl",
    ]


def test_stagewise_commands_match_full_run(tmp_path) -> None:
    corpus, _ = generate(tmp_path)
    graph = tmp_path / "graph.tsv"
    ranks = tmp_path / "pagerank.jsonl"
    clusters = tmp_path / "clusters.jsonl"
    scores = tmp_path / "scores.jsonl"

    assert main(["graph", str(corpus), "--out", str(graph), "--stats", str(tmp_path / "stats.json")] + SNAPSHOT_ARG) == 0
    assert main(["pagerank", str(graph), "--out", str(ranks)]) == 0
    assert main(["cluster", str(corpus), "--out", str(clusters)] + SNAPSHOT_ARG) == 0
    assert main(["score", "--pagerank", str(ranks), "--clusters", str(clusters), "--out", str(scores)]) == 0
    assert main(["run", str(corpus), "--outputs-dir", str(tmp_path / "out")] + SNAPSHOT_ARG) == 0

    full = tmp_path / "out" / "20240108T000000Z"
    assert graph.read_bytes() == (full / "graph.tsv").read_bytes()
    assert clusters.read_bytes() == (full / "clusters.jsonl").read_bytes()
    assert scores.read_bytes() == (full / "scores.jsonl").read_bytes()


def test_eval_reports_embedding_and_clustering_metrics(tmp_path) -> None:
    corpus, truth = generate(tmp_path)
    event_of = {r["id"]: r["event"] for r in map(json.loads, truth.read_text().splitlines())}
    pairs = tmp_path / "pairs.tsv"
    with open(pairs, "w", encoding="utf-8") as f:
        ids = sorted(event_of)
        for a in ids:
            for b in ids:
                if a < b:
                    f.write(f"{a}\t{b}\t{3.0 if event_of[a] == event_of[b] else 0.0}\n")

    clusters = tmp_path / "clusters.jsonl"
    assert main(["cluster", str(corpus), "--out", str(clusters)] + SNAPSHOT_ARG) == 0
    report = tmp_path / "report.json"
    code = main([
        "eval", "--pairs", str(pairs), "--corpus", str(corpus), "--clusters", str(clusters),
        "--report", str(report),
    ] + SNAPSHOT_ARG)
    assert code == 0

    data = json.loads(report.read_text())
    assert set(data) == {"embedding", "clustering"}
    assert data["embedding"]["auc@2.5"] > 0.9
    assert data["clustering"]["tp"] + data["clustering"]["fn"] == 6 * 6


def test_eval_without_inputs_is_rejected(tmp_path) -> None:
    assert main(["eval", "--report", str(tmp_path / "report.json")]) == 1
