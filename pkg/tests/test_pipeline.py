import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from src.corpus import format_timestamp
from src.evaluation import generate_synthetic_corpus, original_wins
from src.pipeline import (
    OriginalityPipeline,
    PipelineConfig,
    p_original_series,
    run_series,
    run_snapshot,
    snapshot_dirname,
)

from conftest import SNAPSHOT, url_of, write_jsonl

ARTIFACTS = ["clusters.jsonl", "config.yaml", "graph.tsv", "pagerank.jsonl", "rejects.jsonl", "scores.jsonl", "stats.json"]


def directory_bytes(path: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def synthetic_corpus_file(tmp_path: Path, events: int = 10, followers: int = 3, seed: int = 0):
    synthetic = generate_synthetic_corpus(events=events, followers=followers, noise_edges=5, seed=seed)
    return synthetic, synthetic.write(tmp_path / "corpus.jsonl")


def test_snapshot_dirname_is_utc() -> None:
    local = datetime(2024, 1, 8, 2, 30, tzinfo=timezone(timedelta(hours=2)))
    assert snapshot_dirname(local) == "20240108T003000Z"


def test_empty_corpus_still_writes_every_artifact(tmp_path) -> None:
    corpus = tmp_path / "empty.jsonl"
    corpus.write_text("")
    result = run_snapshot(corpus, PipelineConfig(), SNAPSHOT, outputs_dir=tmp_path / "out")

    assert result.ok
    assert result.records == []
    assert result.output_dir == tmp_path / "out" / "20240108T000000Z"
    assert sorted(p.name for p in result.output_dir.iterdir()) == ARTIFACTS
    assert (result.output_dir / "scores.jsonl").read_text() == ""
    stats = json.loads((result.output_dir / "stats.json").read_text())
    assert stats["articles"] == 0
    assert stats["graph"]["vertices"] == 0


def test_run_writes_artifacts_and_timings(tmp_path) -> None:
    synthetic, corpus = synthetic_corpus_file(tmp_path)
    result = OriginalityPipeline(PipelineConfig(), tmp_path / "out").run_snapshot(corpus, synthetic.snapshot_time)

    assert sorted(p.name for p in result.output_dir.iterdir()) == ARTIFACTS
    assert not [p for p in (tmp_path / "out").iterdir() if p.name.endswith(".partial")]
    assert {"load", "graph", "pagerank", "cluster", "score", "write"} <= set(result.timings)
    assert "cluster.knn" in result.timings
    assert result.pagerank_converged

    lines = (result.output_dir / "scores.jsonl").read_text().splitlines()
    assert len(lines) == len(synthetic.articles)
    assert [json.loads(line)["id"] for line in lines] == sorted(a.id for a in synthetic.articles)

    saved = (result.output_dir / "config.yaml").read_text()
    assert "workers" not in saved
    assert "damping: 0.85" in saved


def test_existing_snapshot_directory_is_not_clobbered(tmp_path) -> None:
    synthetic, corpus = synthetic_corpus_file(tmp_path, events=3)
    pipeline = OriginalityPipeline(PipelineConfig(), tmp_path / "out")
    pipeline.run_snapshot(corpus, synthetic.snapshot_time)
    with pytest.raises(FileExistsError):
        pipeline.run_snapshot(corpus, synthetic.snapshot_time)
    assert pipeline.run_snapshot(corpus, synthetic.snapshot_time, overwrite=True).ok


def test_reruns_are_byte_identical(tmp_path) -> None:
    synthetic, corpus = synthetic_corpus_file(tmp_path, events=15, followers=4, seed=3)
    first = run_snapshot(corpus, PipelineConfig(), synthetic.snapshot_time, outputs_dir=tmp_path / "a")
    second = run_snapshot(corpus, PipelineConfig(), synthetic.snapshot_time, outputs_dir=tmp_path / "b")
    assert directory_bytes(first.output_dir) == directory_bytes(second.output_dir)


def test_worker_count_does_not_change_output(tmp_path) -> None:
    synthetic, corpus = synthetic_corpus_file(tmp_path, events=15, followers=4, seed=5)
    config = PipelineConfig(target_size=20)
    serial = run_snapshot(corpus, config.replace(workers=1), synthetic.snapshot_time, outputs_dir=tmp_path / "one")
    threaded = run_snapshot(corpus, config.replace(workers=4), synthetic.snapshot_time, outputs_dir=tmp_path / "four")
    assert directory_bytes(serial.output_dir) == directory_bytes(threaded.output_dir)


def test_planted_originals_score_highest_end_to_end(tmp_path) -> None:
    synthetic = generate_synthetic_corpus(events=40, followers=4, seed=11)
    corpus = synthetic.write(tmp_path / "corpus.jsonl")
    result = run_snapshot(corpus, PipelineConfig(), synthetic.snapshot_time, outputs_dir=tmp_path / "out")
    assert len(result.records) == 200
    assert original_wins(result.records, synthetic) >= 0.95


def test_rejected_records_are_reported(tmp_path) -> None:
    corpus = write_jsonl(tmp_path / "corpus.jsonl", [
        {"id": "a", "url": url_of("a", "p1"), "title": "t", "publisher": "p1",
         "published_at": format_timestamp(SNAPSHOT - timedelta(hours=2))},
        "{not json",
    ])
    result = run_snapshot(corpus, PipelineConfig(), SNAPSHOT, outputs_dir=tmp_path / "out")
    rejects = [json.loads(line) for line in (result.output_dir / "rejects.jsonl").read_text().splitlines()]
    assert [r["line"] for r in rejects] == [2]
    assert json.loads((result.output_dir / "stats.json").read_text())["rejected"] == 1


def test_config_file_round_trip(tmp_path) -> None:
    config = PipelineConfig(damping=0.8, passes=3, seed=7, tracking_params=["utm_*"])
    loaded = PipelineConfig.load(config.save(tmp_path / "config.yaml"))
    assert loaded == config

    (tmp_path / "config.json").write_text(json.dumps({"theta": 0.6, "k": 5}))
    from_json = PipelineConfig.load(tmp_path / "config.json")
    assert (from_json.theta, from_json.k) == (0.6, 5)


def test_config_rejects_unknown_and_invalid_fields(tmp_path) -> None:
    (tmp_path / "bad.yaml").write_text("dampng: 0.8\n")
    with pytest.raises(ValueError, match="dampng"):
        PipelineConfig.load(tmp_path / "bad.yaml")
    with pytest.raises(ValueError):
        PipelineConfig(damping=1.0)
    with pytest.raises(ValueError):
        PipelineConfig(theta=0.0)
    with pytest.raises(ValueError):
        PipelineConfig(provider="precomputed")
    (tmp_path / "config.toml").write_text("")
    with pytest.raises(ValueError, match="Unsupported"):
        PipelineConfig.load(tmp_path / "config.toml")
    with pytest.raises(FileNotFoundError):
        PipelineConfig.load(tmp_path / "missing.yaml")


def test_config_values_are_converted_to_field_types(tmp_path) -> None:
    # YAML 1.1 reads 1e-10 (no dot) as a string
    (tmp_path / "config.yaml").write_text(
        "tolerance: 1e-10\nk: \"5\"\nmin_similarity: 0\npasses: 4.0\nalpha:\n  wire: \"0.5\"\n"
    )
    loaded = PipelineConfig.load(tmp_path / "config.yaml")
    assert loaded.tolerance == 1e-10 and isinstance(loaded.tolerance, float)
    assert loaded.k == 5 and isinstance(loaded.k, int)
    assert loaded.min_similarity == 0.0 and isinstance(loaded.min_similarity, float)
    assert loaded.passes == 4 and isinstance(loaded.passes, int)
    assert loaded.alpha == {"wire": 0.5}


def test_config_rejects_values_of_the_wrong_type(tmp_path) -> None:
    for line, field_name in [
        ("k: five", "k"),
        ("passes: 2.5", "passes"),
        ("tolerance: [1, 2]", "tolerance"),
        ("seed: true", "seed"),
        ("theta: .nan", "theta"),
        ("tracking_params: utm_source", "tracking_params"),
        ("blocklist: 3", "blocklist"),
    ]:
        (tmp_path / "config.yaml").write_text(line + "\n")
        with pytest.raises(ValueError, match=field_name):
            PipelineConfig.load(tmp_path / "config.yaml")


def test_config_replace_ignores_unset_overrides() -> None:
    config = PipelineConfig(seed=3)
    assert config.replace(seed=None, workers=None) == config
    assert config.replace(seed=9).seed == 9


def burst_corpus(path: Path, start: datetime) -> Path:
    """One original published before the first tick, four citing follow-ups landing before the second."""
    records = [{
        "id": "orig",
        "url": url_of("orig", "p0"),
        "title": "Storm hits coast town",
        "publisher": "p0",
        "published_at": format_timestamp(start - timedelta(minutes=30)),
    }]
    for i in range(1, 5):
        records.append({
            "id": f"f{i}",
            "url": url_of(f"f{i}", f"p{i}"),
            "title": "Storm hits coast town!",
            "publisher": f"p{i}",
            "published_at": format_timestamp(start + timedelta(minutes=10 * i)),
            "links": [url_of("orig", "p0")],
        })
    return write_jsonl(path, records)


def test_series_tracks_an_original_through_a_burst(tmp_path) -> None:
    start = datetime(2024, 1, 7, 12, tzinfo=timezone.utc)
    corpus = burst_corpus(tmp_path / "corpus.jsonl", start)
    results = run_series(corpus, PipelineConfig(), start, start + timedelta(hours=1), outputs_dir=tmp_path / "out")

    assert [r.ok for r in results] == [True, True]
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["20240107T120000Z", "20240107T130000Z", "series.jsonl"]

    before = {r.id: r for r in results[0].records}
    assert list(before) == ["orig"]
    assert before["orig"].originality is None
    assert before["orig"].p_original == 0.0

    after = {r.id: r for r in results[1].records}
    assert len(after) == 5
    assert len({r.cluster for r in after.values()}) == 1
    assert all(after["orig"].originality > after[f"f{i}"].originality for i in range(1, 5))
    assert after["orig"].p_original > 0.0

    series = p_original_series(results)
    assert [stamp for stamp, _ in series["orig"]] == ["2024-01-07T12:00:00Z", "2024-01-07T13:00:00Z"]
    assert [stamp for stamp, _ in series["f1"]] == ["2024-01-07T13:00:00Z"]

    lines = [json.loads(line) for line in (tmp_path / "out" / "series.jsonl").read_text().splitlines()]
    assert [line["id"] for line in lines] == ["f1", "f2", "f3", "f4", "orig"]


def test_single_tick_series(tmp_path) -> None:
    start = datetime(2024, 1, 7, 12, tzinfo=timezone.utc)
    corpus = burst_corpus(tmp_path / "corpus.jsonl", start)
    pipeline = OriginalityPipeline(PipelineConfig(), tmp_path / "out")
    results = pipeline.run_series(corpus, start, start + timedelta(minutes=30))
    assert len(results) == 1
    with pytest.raises(ValueError):
        pipeline.run_series(corpus, start, start)


def test_failed_ticks_are_recorded_not_fatal(tmp_path) -> None:
    start = datetime(2024, 1, 7, 12, tzinfo=timezone.utc)
    results = run_series(
        tmp_path / "missing.jsonl", PipelineConfig(), start, start + timedelta(hours=2), outputs_dir=tmp_path / "out"
    )
    assert len(results) == 3
    assert not any(r.ok for r in results)
    assert "not found" in results[0].error
    assert (tmp_path / "out" / "series.jsonl").read_text() == ""
