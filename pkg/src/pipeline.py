import json
import logging
import math
import shutil
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union, get_args, get_origin

import yaml

from . import config as defaults
from .citation import (
    CitationGraph,
    GraphStats,
    PageRankScores,
    build_graph,
    graph_stats,
    pagerank,
    read_blocklist,
    write_edges,
    write_pagerank,
)
from .cluster import ClusterAssignment, LocalParams, SplitParams, three_step_cluster, write_clusters
from .corpus import CorpusSnapshot, format_timestamp, load_corpus, read_canonical_map, write_rejects
from .embed import make_provider
from .score import OriginalityRecord, score_articles, validate_theta, write_records

logger = logging.getLogger(__name__)

SNAPSHOT_DIR_FORMAT = "%Y%m%dT%H%M%SZ"


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _coerce(name: str, kind: Any, value: Any) -> Any:
    """Convert a loaded config value to its field type; YAML reads `1e-10` as a string."""
    origin = get_origin(kind)
    if origin is Union:
        if value is None:
            return None
        kind = next(arg for arg in get_args(kind) if arg is not type(None))
        origin = get_origin(kind)

    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{name} must be a list, got {value!r}")
        return [_coerce(name, get_args(kind)[0], item) for item in value]
    if origin is dict:
        if not isinstance(value, Mapping):
            raise ValueError(f"{name} must be a mapping, got {value!r}")
        key_type, value_type = get_args(kind)
        return {_coerce(name, key_type, k): _coerce(f"{name}.{k}", value_type, v) for k, v in value.items()}
    if kind is str:
        if not isinstance(value, (str, Path)):
            raise ValueError(f"{name} must be a string, got {value!r}")
        return str(value)

    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ValueError(f"{name} must be {kind.__name__}, got {value!r}")
    try:
        number = float(value)
    except ValueError:
        raise ValueError(f"{name} must be {kind.__name__}, got {value!r}") from None
    if not math.isfinite(number):
        raise ValueError(f"{name} must be finite, got {value!r}")
    if kind is float:
        return number
    if isinstance(value, int):
        return value
    if not number.is_integer():
        raise ValueError(f"{name} must be int, got {value!r}")
    return int(number)


@dataclass
class PipelineConfig:
    window_days: int = defaults.WINDOW_DAYS
    damping: float = defaults.DAMPING
    tolerance: float = defaults.PAGERANK_TOLERANCE
    max_iterations: int = defaults.PAGERANK_MAX_ITERATIONS
    provider: str = defaults.EMBEDDING_PROVIDER
    dimension: int = defaults.EMBEDDING_DIMENSION
    precomputed_vectors: Optional[str] = None
    k: int = defaults.KNN_K
    min_similarity: float = defaults.MIN_SIMILARITY
    target_size: int = defaults.TARGET_SIZE
    epsilon: float = defaults.SPLIT_EPSILON
    lower: float = defaults.SPLIT_LOWER
    upper: float = defaults.SPLIT_UPPER
    omega: float = defaults.OMEGA
    passes: int = defaults.PASSES
    seed: int = defaults.SEED
    p: float = defaults.NORM_P
    theta: float = defaults.THETA
    blocklist: Optional[str] = None
    canonical_map: Optional[str] = None
    tracking_params: List[str] = field(default_factory=lambda: list(defaults.TRACKING_PARAMS))
    workers: int = defaults.DEFAULT_WORKERS
    alpha: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.window_days < 1:
            raise ValueError(f"window_days must be positive, got {self.window_days}")
        if not 0.0 < self.damping < 1.0:
            raise ValueError(f"damping must be in (0, 1), got {self.damping}")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.provider not in ("hashing", "precomputed"):
            raise ValueError(f"provider must be 'hashing' or 'precomputed', got {self.provider!r}")
        if self.provider == "precomputed" and not self.precomputed_vectors:
            raise ValueError("provider 'precomputed' requires precomputed_vectors")
        if self.dimension < 1:
            raise ValueError(f"dimension must be positive, got {self.dimension}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not -1.0 <= self.min_similarity <= 1.0:
            raise ValueError(f"min_similarity must be in [-1, 1], got {self.min_similarity}")
        if self.p <= 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        validate_theta(self.theta)
        self.split_params()
        self.local_params()

    def split_params(self) -> SplitParams:
        return SplitParams(target_size=self.target_size, epsilon=self.epsilon, lower=self.lower, upper=self.upper)

    def local_params(self) -> LocalParams:
        return LocalParams(omega=self.omega, passes=self.passes, seed=self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown config fields: {', '.join(unknown)}")
        types = {f.name: f.type for f in fields(cls)}
        return cls(**{name: _coerce(name, types[name], value) for name, value in data.items()})

    @classmethod
    def load(cls, path: Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            if path.suffix in (".yaml", ".yml"):
                data = yaml.safe_load(f)
            elif path.suffix == ".json":
                data = json.load(f)
            else:
                raise ValueError(f"Unsupported config format: {path.suffix}. Use .json, .yaml, or .yml")
        return cls.from_dict(data or {})

    def save(self, path: Path, exclude: Sequence[str] = ()) -> Path:
        path = Path(path)
        data = {k: v for k, v in self.to_dict().items() if k not in exclude}
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(data, f, sort_keys=True)
        return path

    def replace(self, **overrides) -> "PipelineConfig":
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig.from_dict(data)


@dataclass
class SnapshotResult:
    snapshot_time: datetime
    records: List[OriginalityRecord] = field(default_factory=list)
    graph_stats: GraphStats = field(default_factory=GraphStats)
    timings: Dict[str, float] = field(default_factory=dict)
    output_dir: Optional[Path] = None
    clusters: int = 0
    pagerank_converged: Optional[bool] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def snapshot_dirname(snapshot_time: datetime) -> str:
    return snapshot_time.astimezone(timezone.utc).strftime(SNAPSHOT_DIR_FORMAT)


class OriginalityPipeline:
    """Full recomputation of the originality signal for one or many snapshot times."""

    def __init__(self, config: Optional[PipelineConfig] = None, outputs_dir: Path = defaults.OUTPUTS_DIR):
        self.config = config or PipelineConfig()
        self.outputs_dir = Path(outputs_dir)

    @contextmanager
    def _stage(self, name: str, timings: Dict[str, float]) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        except PipelineStageError:
            raise
        except Exception as e:
            logger.error(f"Stage '{name}' failed: {e}", exc_info=True)
            raise PipelineStageError(name, e) from e
        finally:
            timings[name] = time.perf_counter() - started

    def run_snapshot(self, corpus_path: Path, snapshot_time: datetime, overwrite: bool = False) -> SnapshotResult:
        cfg = self.config
        timings: Dict[str, float] = {}
        result = SnapshotResult(snapshot_time=snapshot_time, timings=timings)
        logger.info(f"Snapshot {format_timestamp(snapshot_time)}: starting pipeline over {corpus_path}")

        final_dir = self.outputs_dir / snapshot_dirname(snapshot_time)
        if final_dir.exists() and not overwrite:
            raise FileExistsError(f"Snapshot directory already exists: {final_dir}")

        with self._stage("load", timings):
            canonical_map = read_canonical_map(cfg.canonical_map) if cfg.canonical_map else {}
            blocklist = read_blocklist(cfg.blocklist) if cfg.blocklist else set()
            corpus = load_corpus(corpus_path, snapshot_time, cfg.window_days, canonical_map, cfg.tracking_params)

        with self._stage("graph", timings):
            graph = build_graph(corpus, blocklist)
            result.graph_stats = graph_stats(graph)

        with self._stage("pagerank", timings):
            if graph.is_empty():
                logger.info("Citation graph is empty; skipping PageRank")
                scores = PageRankScores(scores={}, iterations=0, residual=0.0, converged=True)
            else:
                scores = pagerank(graph, cfg.damping, cfg.tolerance, cfg.max_iterations)
            result.pagerank_converged = scores.converged

        with self._stage("cluster", timings):
            cluster_timings: Dict[str, float] = {}
            provider = make_provider(cfg.provider, cfg.dimension, cfg.precomputed_vectors)
            clusters = three_step_cluster(
                corpus,
                provider,
                k=cfg.k,
                split=cfg.split_params(),
                local=cfg.local_params(),
                min_similarity=cfg.min_similarity,
                workers=cfg.workers,
                timings=cluster_timings,
            )
            result.clusters = clusters.num_clusters
        timings.update({f"cluster.{name}": seconds for name, seconds in cluster_timings.items()})

        with self._stage("score", timings):
            result.records = score_articles(scores, clusters, cfg.p, cfg.theta)

        with self._stage("write", timings):
            result.output_dir = self._write_artifacts(final_dir, corpus, graph, scores, clusters, result)

        self._log_summary(result)
        return result

    def _write_artifacts(
        self,
        final_dir: Path,
        corpus: CorpusSnapshot,
        graph: CitationGraph,
        scores: PageRankScores,
        clusters: ClusterAssignment,
        result: SnapshotResult,
    ) -> Path:
        partial_dir = final_dir.with_name(f".{final_dir.name}.partial")
        if partial_dir.exists():
            shutil.rmtree(partial_dir)
        partial_dir.mkdir(parents=True)

        try:
            write_edges(partial_dir / "graph.tsv", graph)
            write_pagerank(partial_dir / "pagerank.jsonl", scores)
            write_clusters(partial_dir / "clusters.jsonl", clusters)
            write_records(partial_dir / "scores.jsonl", result.records)
            write_rejects(partial_dir / "rejects.jsonl", corpus.rejects)
            # worker count never changes the output, so it stays out of the snapshot
            self.config.save(partial_dir / "config.yaml", exclude=("workers",))

            stats = {
                "snapshot_time": format_timestamp(result.snapshot_time),
                "articles": len(corpus.articles),
                "rejected": len(corpus.rejects),
                "outside_window": corpus.excluded,
                "clusters": result.clusters,
                "clustering_objective": clusters.objective,
                "pagerank": {
                    "iterations": scores.iterations,
                    "residual": scores.residual,
                    "converged": scores.converged,
                },
                "graph": result.graph_stats.to_dict(),
            }
            with open(partial_dir / "stats.json", "w", encoding="utf-8") as f:
                json.dump(stats, f, indent=2, sort_keys=True)
                f.write("\n")

            if final_dir.exists():
                shutil.rmtree(final_dir)
            partial_dir.rename(final_dir)
        except Exception:
            shutil.rmtree(partial_dir, ignore_errors=True)
            raise

        logger.info(f"Wrote snapshot artifacts to {final_dir}")
        return final_dir

    def _log_summary(self, result: SnapshotResult) -> None:
        promoted = sum(1 for r in result.records if r.p_original > 0)
        logger.info(f"{'=' * 60}")
        logger.info(f"Snapshot {format_timestamp(result.snapshot_time)} complete")
        logger.info(f"  Articles scored: {len(result.records)}")
        logger.info(f"  Citation graph: {result.graph_stats.vertices} vertices, {result.graph_stats.edges} edges")
        logger.info(f"  Clusters: {result.clusters}")
        logger.info(f"  Promoted (P(original) > 0): {promoted}")
        for stage, seconds in result.timings.items():
            logger.info(f"  {stage:<16} {seconds:8.3f}s")
        logger.info(f"{'=' * 60}")

    def run_series(
        self,
        corpus_path: Path,
        start_time: datetime,
        end_time: datetime,
        interval: timedelta = timedelta(hours=defaults.SERIES_INTERVAL_HOURS),
        overwrite: bool = False,
    ) -> List[SnapshotResult]:
        """One independent snapshot per tick from start to end inclusive; failed ticks are recorded, not fatal."""
        if start_time >= end_time:
            raise ValueError(f"start_time must precede end_time ({start_time} >= {end_time})")
        if interval <= timedelta(0):
            raise ValueError(f"interval must be positive, got {interval}")

        ticks = []
        tick = start_time
        while tick <= end_time:
            ticks.append(tick)
            tick += interval
        logger.info(f"Running series of {len(ticks)} snapshots every {interval}")

        results: List[SnapshotResult] = []
        for tick in ticks:
            try:
                results.append(self.run_snapshot(corpus_path, tick, overwrite=overwrite))
            except Exception as e:
                logger.warning(f"Tick {format_timestamp(tick)} failed: {e}")
                results.append(SnapshotResult(snapshot_time=tick, error=str(e)))

        self.outputs_dir.mkdir(parents=True, exist_ok=True)
        write_series(self.outputs_dir / "series.jsonl", results)
        failed = sum(1 for r in results if not r.ok)
        if failed:
            logger.warning(f"{failed} of {len(results)} ticks failed")
        return results


def p_original_series(results: List[SnapshotResult]) -> Dict[str, List[Tuple[str, float]]]:
    """Per-article (timestamp, P(original)) pairs over the successful ticks that include the article."""
    series: Dict[str, List[Tuple[str, float]]] = {}
    for result in results:
        if not result.ok:
            continue
        stamp = format_timestamp(result.snapshot_time)
        for record in result.records:
            series.setdefault(record.id, []).append((stamp, record.p_original))
    return dict(sorted(series.items()))


def write_series(path: Path, results: List[SnapshotResult]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for aid, points in p_original_series(results).items():
            f.write(json.dumps({"id": aid, "series": [list(point) for point in points]}) + "\n")
    return path


def run_snapshot(
    corpus_path: Path,
    config: PipelineConfig,
    snapshot_time: datetime,
    outputs_dir: Path = defaults.OUTPUTS_DIR,
    overwrite: bool = False,
) -> SnapshotResult:
    return OriginalityPipeline(config, outputs_dir).run_snapshot(corpus_path, snapshot_time, overwrite)


def run_series(
    corpus_path: Path,
    config: PipelineConfig,
    start_time: datetime,
    end_time: datetime,
    interval: timedelta = timedelta(hours=defaults.SERIES_INTERVAL_HOURS),
    outputs_dir: Path = defaults.OUTPUTS_DIR,
    overwrite: bool = False,
) -> List[SnapshotResult]:
    return OriginalityPipeline(config, outputs_dir).run_series(corpus_path, start_time, end_time, interval, overwrite)
