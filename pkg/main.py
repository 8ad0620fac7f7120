#!/usr/bin/env python3
import argparse
import json
import logging
import sys
from dataclasses import asdict
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import List, Optional

from src.citation import (
    build_graph,
    graph_stats,
    pagerank,
    read_blocklist,
    read_edges,
    read_pagerank,
    write_edges,
    write_pagerank,
)
from src.cluster import read_clusters, three_step_cluster, write_clusters
from src.config import DEFAULT_CONFIG_PATH, LOG_FILE, OUTPUTS_DIR, SERIES_INTERVAL_HOURS
from src.corpus import format_timestamp, load_corpus, parse_timestamp, read_canonical_map, write_corpus, write_rejects
from src.embed import make_provider
from src.evaluation import (
    DEFAULT_LIFT_THRESHOLDS,
    clustering_precision_recall,
    evaluate_embeddings,
    generate_synthetic_corpus,
    in_degree_views,
    lift_table,
    originality_accuracy,
    read_labeled_pairs,
    read_originality_labels,
    write_report,
)
from src.pipeline import OriginalityPipeline, PipelineConfig, PipelineStageError
from src.score import RelevanceInputs, ScoreWeights, rank_by_relevance, read_records, score_articles, write_records

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2


class CLIArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def setup_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else logging.INFO

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if LOG_FILE:
        handlers.append(logging.FileHandler(LOG_FILE))

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '--config',
        type=str,
        default=DEFAULT_CONFIG_PATH or None,
        help='Pipeline config file (YAML or JSON)'
    )
    common.add_argument('--seed', type=int, help='Override the clustering seed')
    common.add_argument('--workers', type=int, help='Override the worker thread count')
    common.add_argument(
        '--snapshot-time',
        type=str,
        help='Snapshot time, RFC 3339 (default: now, UTC)'
    )
    common.add_argument('--verbose', '-v', action='store_true', help='Enable verbose logging')

    parser = CLIArgumentParser(
        prog='main.py',
        description='News originality pipeline: citation PageRank, event clustering and originality scores',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py generate --events 50 --followers 5 --out data/corpus.jsonl --truth data/truth.jsonl
  python main.py run data/corpus.jsonl --snapshot-time 2024-01-08T00:00:00Z
  python main.py series data/corpus.jsonl --start 2024-01-07T00:00:00Z --end 2024-01-07T03:00:00Z
        """
    )
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CLIArgumentParser)

    p = sub.add_parser('ingest', parents=[common], help='Load and validate a corpus snapshot')
    p.add_argument('corpus', type=str, help='Articles JSONL')
    p.add_argument('--out', type=str, required=True, help='Windowed, canonicalized articles JSONL')
    p.add_argument('--rejects', type=str, help='Rejects report JSONL')

    p = sub.add_parser('graph', parents=[common], help='Build the citation graph')
    p.add_argument('corpus', type=str, help='Articles JSONL')
    p.add_argument('--out', type=str, required=True, help='Edge list TSV')
    p.add_argument('--stats', type=str, help='Graph statistics JSON')

    p = sub.add_parser('pagerank', parents=[common], help='PageRank over an edge list')
    p.add_argument('graph', type=str, help='Edge list TSV')
    p.add_argument('--out', type=str, required=True, help='PageRank JSONL')

    p = sub.add_parser('cluster', parents=[common], help='Three-step title clustering')
    p.add_argument('corpus', type=str, help='Articles JSONL')
    p.add_argument('--out', type=str, required=True, help='Cluster assignment JSONL')
    p.add_argument('--subgraph-dir', type=str, help='Dump each split subgraph as TSV here')

    p = sub.add_parser('score', parents=[common], help='Cluster-normalized originality and P(original)')
    p.add_argument('--pagerank', type=str, required=True, help='PageRank JSONL')
    p.add_argument('--clusters', type=str, required=True, help='Cluster assignment JSONL')
    p.add_argument('--out', type=str, required=True, help='Originality records JSONL')
    p.add_argument('--weights', type=str, help='Relevance weights (YAML or JSON)')
    p.add_argument('--features', type=str, help='Engagement probabilities JSONL, one {"id", ...} per article')
    p.add_argument('--ranked', type=str, help='Relevance ranking JSONL (needs --weights and --features)')

    p = sub.add_parser('run', parents=[common], help='Full snapshot run')
    p.add_argument('corpus', type=str, help='Articles JSONL')
    p.add_argument('--outputs-dir', type=str, default=str(OUTPUTS_DIR), help=f'Snapshot root (default: {OUTPUTS_DIR})')
    p.add_argument('--overwrite', action='store_true', help='Replace an existing snapshot directory')
    p.add_argument('--timings', type=str, help='Write stage timings JSON here')

    p = sub.add_parser('series', parents=[common], help='Hourly refresh over a time range')
    p.add_argument('corpus', type=str, help='Articles JSONL')
    p.add_argument('--start', type=str, required=True, help='First tick, RFC 3339')
    p.add_argument('--end', type=str, required=True, help='Last tick, RFC 3339')
    p.add_argument(
        '--interval-hours',
        type=float,
        default=SERIES_INTERVAL_HOURS,
        help=f'Hours between ticks (default: {SERIES_INTERVAL_HOURS})'
    )
    p.add_argument('--outputs-dir', type=str, default=str(OUTPUTS_DIR), help=f'Series root (default: {OUTPUTS_DIR})')
    p.add_argument('--overwrite', action='store_true', help='Replace existing snapshot directories')

    p = sub.add_parser('eval', parents=[common], help='Evaluation metrics against labels')
    p.add_argument('--pairs', type=str, help='Labeled pairs TSV')
    p.add_argument('--corpus', type=str, help='Articles JSONL, for embedding AUC and the lift table')
    p.add_argument('--clusters', type=str, help='Cluster assignment JSONL, for precision/recall')
    p.add_argument('--scores', type=str, help='Originality records JSONL')
    p.add_argument('--labels', type=str, help='Originality ratings TSV')
    p.add_argument('--positive-at', type=float, default=1.5, help='Pair label above which a pair is positive')
    p.add_argument('--report', type=str, required=True, help='Report JSON')

    p = sub.add_parser('generate', parents=[common], help='Synthetic corpus with planted originals')
    p.add_argument('--events', type=int, required=True)
    p.add_argument('--followers', type=int, required=True)
    p.add_argument('--noise', type=int, default=0, help='Random extra citations')
    p.add_argument('--out', type=str, required=True, help='Articles JSONL')
    p.add_argument('--truth', type=str, help='Ground truth JSONL')

    return parser


def load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(Path(args.config)) if args.config else PipelineConfig()
    return config.replace(seed=args.seed, workers=args.workers)


def snapshot_time_of(args) -> datetime:
    if args.snapshot_time:
        return parse_timestamp(args.snapshot_time)
    return datetime.now(timezone.utc).replace(microsecond=0)


def load_windowed(args, config: PipelineConfig):
    canonical_map = read_canonical_map(config.canonical_map) if config.canonical_map else {}
    return load_corpus(
        Path(args.corpus),
        snapshot_time_of(args),
        config.window_days,
        canonical_map,
        config.tracking_params,
    )


def cmd_ingest(args, config: PipelineConfig) -> int:
    corpus = load_windowed(args, config)
    write_corpus(Path(args.out), corpus.articles)
    if args.rejects:
        write_rejects(Path(args.rejects), corpus.rejects)
    logger.info(f"Kept {len(corpus)} articles, rejected {len(corpus.rejects)}, {corpus.excluded} outside window")
    return EXIT_OK


def cmd_graph(args, config: PipelineConfig) -> int:
    corpus = load_windowed(args, config)
    blocklist = read_blocklist(config.blocklist) if config.blocklist else set()
    graph = build_graph(corpus, blocklist)
    write_edges(Path(args.out), graph)
    if args.stats:
        write_report(Path(args.stats), graph_stats(graph).to_dict())
    logger.info(f"Citation graph: {len(graph.vertices)} vertices, {len(graph.edges)} edges -> {args.out}")
    return EXIT_OK


def cmd_pagerank(args, config: PipelineConfig) -> int:
    graph = read_edges(Path(args.graph))
    scores = pagerank(graph, config.damping, config.tolerance, config.max_iterations)
    write_pagerank(Path(args.out), scores)
    logger.info(f"PageRank: {scores.iterations} iterations, residual {scores.residual:.3e} -> {args.out}")
    return EXIT_OK


def cmd_cluster(args, config: PipelineConfig) -> int:
    corpus = load_windowed(args, config)
    provider = make_provider(config.provider, config.dimension, config.precomputed_vectors)
    timings = {}
    clusters = three_step_cluster(
        corpus,
        provider,
        k=config.k,
        split=config.split_params(),
        local=config.local_params(),
        min_similarity=config.min_similarity,
        workers=config.workers,
        timings=timings,
        subgraph_dir=Path(args.subgraph_dir) if args.subgraph_dir else None,
    )
    write_clusters(Path(args.out), clusters)
    for stage, seconds in timings.items():
        logger.info(f"  {stage:<8} {seconds:8.3f}s")
    logger.info(f"{clusters.num_clusters} clusters (objective {clusters.objective:.4f}) -> {args.out}")
    return EXIT_OK


def read_features(path: Path):
    items = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                aid = record.pop("id")
                items.append((aid, {name: float(value) for name, value in record.items()}))
    return items


def cmd_score(args, config: PipelineConfig) -> int:
    weights = ScoreWeights.load(Path(args.weights)) if args.weights else ScoreWeights(
        alpha=dict(config.alpha), theta=config.theta, p=config.p
    )
    scores = read_pagerank(Path(args.pagerank))
    clusters = read_clusters(Path(args.clusters))
    records = score_articles(scores, clusters, weights.p, weights.theta)
    write_records(Path(args.out), records)
    logger.info(f"Wrote {len(records)} originality records -> {args.out}")

    if args.ranked:
        if not args.features or not weights.alpha:
            raise ValueError("--ranked needs --features and non-empty relevance weights")
        items = [
            (aid, RelevanceInputs(probabilities=probabilities, weights=weights.alpha))
            for aid, probabilities in read_features(Path(args.features))
        ]
        ranked = rank_by_relevance(items, {r.id: r for r in records})
        with open(args.ranked, "w", encoding="utf-8") as f:
            for aid, value in ranked:
                f.write(json.dumps({"id": aid, "relevance": value}) + "\n")
        logger.info(f"Ranked {len(ranked)} articles -> {args.ranked}")
    return EXIT_OK


def cmd_run(args, config: PipelineConfig) -> int:
    logger.info("=" * 80)
    logger.info("NEWS ORIGINALITY SNAPSHOT")
    logger.info("=" * 80)

    pipeline = OriginalityPipeline(config, Path(args.outputs_dir))
    result = pipeline.run_snapshot(Path(args.corpus), snapshot_time_of(args), overwrite=args.overwrite)
    if args.timings:
        write_report(Path(args.timings), result.timings)

    logger.info(f"Output directory: {result.output_dir}")
    logger.info("=" * 80)
    return EXIT_OK


def cmd_series(args, config: PipelineConfig) -> int:
    logger.info("=" * 80)
    logger.info("NEWS ORIGINALITY SERIES")
    logger.info("=" * 80)

    if args.interval_hours <= 0:
        raise ValueError(f"--interval-hours must be positive, got {args.interval_hours}")
    pipeline = OriginalityPipeline(config, Path(args.outputs_dir))
    results = pipeline.run_series(
        Path(args.corpus),
        parse_timestamp(args.start),
        parse_timestamp(args.end),
        timedelta(hours=args.interval_hours),
        overwrite=args.overwrite,
    )

    for result in results:
        status = f"✓ {result.output_dir}" if result.ok else f"✗ {result.error}"
        logger.info(f"  {format_timestamp(result.snapshot_time)}  {status}")
    failed = sum(1 for r in results if not r.ok)
    logger.info(f"{len(results) - failed}/{len(results)} ticks succeeded")
    logger.info("=" * 80)
    return EXIT_OK if not failed else EXIT_FAILURE


def cmd_eval(args, config: PipelineConfig) -> int:
    report = {}
    pairs = read_labeled_pairs(Path(args.pairs)) if args.pairs else []
    corpus = load_windowed(args, config) if args.corpus else None

    if pairs and corpus is not None:
        titles = {a.id: a.title for a in corpus.articles}
        provider = make_provider(config.provider, config.dimension, config.precomputed_vectors)
        report["embedding"] = evaluate_embeddings(pairs, titles, provider)
    if pairs and args.clusters:
        report["clustering"] = clustering_precision_recall(
            read_clusters(Path(args.clusters)), pairs, args.positive_at
        ).to_dict()

    if args.scores:
        records = read_records(Path(args.scores))
        if args.labels:
            report["originality"] = originality_accuracy(records, read_originality_labels(Path(args.labels)), config.theta)
        if corpus is not None:
            views = in_degree_views(build_graph(corpus))
            report["lift"] = [asdict(row) for row in lift_table(records, views, DEFAULT_LIFT_THRESHOLDS)]

    if not report:
        raise ValueError("Nothing to evaluate: pass --pairs with --corpus/--clusters, or --scores")
    write_report(Path(args.report), report)
    logger.info(f"Evaluation report -> {args.report}")
    return EXIT_OK


def cmd_generate(args, config: PipelineConfig) -> int:
    kwargs = {}
    if args.snapshot_time:
        kwargs["snapshot_time"] = parse_timestamp(args.snapshot_time)
    corpus = generate_synthetic_corpus(
        args.events,
        args.followers,
        noise_edges=args.noise,
        seed=config.seed,
        window_days=config.window_days,
        **kwargs,
    )
    corpus.write(Path(args.out))
    if args.truth:
        corpus.write_truth(Path(args.truth))
    logger.info(f"Synthetic snapshot time: {format_timestamp(corpus.snapshot_time)}")
    return EXIT_OK


COMMANDS = {
    'ingest': cmd_ingest,
    'graph': cmd_graph,
    'pagerank': cmd_pagerank,
    'cluster': cmd_cluster,
    'score': cmd_score,
    'run': cmd_run,
    'series': cmd_series,
    'eval': cmd_eval,
    'generate': cmd_generate,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_INVALID

    setup_logging(args.verbose)

    try:
        config = load_config(args)
        return COMMANDS[args.command](args, config)
    except PipelineStageError as e:
        if isinstance(e.cause, (ValueError, FileNotFoundError)):
            logger.error(f"Validation error in stage '{e.stage}': {e.cause}")
            return EXIT_INVALID
        logger.error(f"Stage '{e.stage}' failed: {e.cause}")
        return EXIT_FAILURE
    except (FileNotFoundError, FileExistsError) as e:
        logger.error(f"Error: {e}")
        return EXIT_INVALID
    except ValueError as e:
        logger.error(f"Validation error: {e}")
        return EXIT_INVALID
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
