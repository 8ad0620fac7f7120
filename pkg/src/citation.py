"""Integrity-filtered news citation graph and global PageRank."""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
from scipy.sparse import coo_matrix

from .config import DAMPING, PAGERANK_MAX_ITERATIONS, PAGERANK_TOLERANCE
from .corpus import CorpusSnapshot

logger = logging.getLogger(__name__)

Edge = Tuple[str, str]

REMOVAL_COUNTERS = (
    "self_links_removed",
    "same_publisher_removed",
    "blocklisted_removed",
    "duplicate_links_collapsed",
    "unresolved_links",
    "isolated_removed",
)


class EmptyGraphError(ValueError):
    pass


@dataclass
class CitationGraph:
    """Directed graph where edge (v, u) means article v cites article u."""
    vertices: List[str] = field(default_factory=list)
    edges: List[Edge] = field(default_factory=list)
    vertex_meta: Dict[str, Tuple[str, datetime]] = field(default_factory=dict)
    removed: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in REMOVAL_COUNTERS})

    def __post_init__(self):
        self.vertices = sorted(set(self.vertices))
        self.edges = sorted(set(self.edges))

    def out_degrees(self) -> Counter:
        return Counter(v for v, _ in self.edges)

    def in_degrees(self) -> Counter:
        return Counter(u for _, u in self.edges)

    def is_empty(self) -> bool:
        return not self.vertices


@dataclass
class PageRankScores:
    scores: Dict[str, float]
    iterations: int
    residual: float
    converged: bool

    def to_records(self) -> List[Dict]:
        return [{"id": vid, "pagerank": score} for vid, score in self.scores.items()]


@dataclass
class GraphStats:
    vertices: int = 0
    edges: int = 0
    in_degree_histogram: Dict[int, int] = field(default_factory=dict)
    out_degree_histogram: Dict[int, int] = field(default_factory=dict)
    removed: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in REMOVAL_COUNTERS})

    def to_dict(self) -> Dict:
        return {
            "vertices": self.vertices,
            "edges": self.edges,
            "in_degree_histogram": {str(k): v for k, v in sorted(self.in_degree_histogram.items())},
            "out_degree_histogram": {str(k): v for k, v in sorted(self.out_degree_histogram.items())},
            "removed": dict(self.removed),
        }


def build_graph(corpus: CorpusSnapshot, blocklist: Optional[Set[str]] = None) -> CitationGraph:
    """
    Build the citation graph over a windowed corpus.

    An edge v -> u exists when one of v's links is u's canonical URL, the two
    articles come from different publishers and neither publisher is
    blocklisted. Articles left without any edge are dropped.
    """
    blocklist = {p.strip() for p in (blocklist or set())}
    by_canonical = {article.canonical_url: article for article in corpus.articles}
    removed = {name: 0 for name in REMOVAL_COUNTERS}
    edges: Set[Edge] = set()

    for article in corpus.articles:
        for link in article.links:
            cited = by_canonical.get(link)
            if cited is None:
                removed["unresolved_links"] += 1
                continue
            if cited.id == article.id:
                removed["self_links_removed"] += 1
            elif cited.publisher == article.publisher:
                removed["same_publisher_removed"] += 1
            elif article.publisher in blocklist or cited.publisher in blocklist:
                removed["blocklisted_removed"] += 1
            elif (article.id, cited.id) in edges:
                removed["duplicate_links_collapsed"] += 1
            else:
                edges.add((article.id, cited.id))

    connected = {v for edge in edges for v in edge}
    removed["isolated_removed"] = len(corpus.articles) - len(connected)
    meta = {
        article.id: (article.publisher, article.published_at)
        for article in corpus.articles if article.id in connected
    }

    graph = CitationGraph(vertices=list(connected), edges=list(edges), vertex_meta=meta, removed=removed)
    logger.info(
        f"Citation graph: {len(graph.vertices)} vertices, {len(graph.edges)} edges "
        f"(self-links {removed['self_links_removed']}, same-publisher {removed['same_publisher_removed']}, "
        f"blocklisted {removed['blocklisted_removed']}, isolated {removed['isolated_removed']})"
    )
    return graph


def pagerank(
    graph: CitationGraph,
    damping: float = DAMPING,
    tolerance: float = PAGERANK_TOLERANCE,
    max_iterations: int = PAGERANK_MAX_ITERATIONS,
) -> PageRankScores:
    """
    Power iteration on the citation graph with probability normalization.

    Each citing article splits its score evenly over its out-links; the mass
    of articles with no out-links is spread uniformly. Stops when the L1
    change drops to `tolerance` or after `max_iterations`.
    """
    if graph.is_empty():
        raise EmptyGraphError("PageRank requires a non-empty citation graph")
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must be in (0, 1), got {damping}")
    if tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    if max_iterations < 1:
        raise ValueError(f"max_iterations must be >= 1, got {max_iterations}")

    index = {vid: i for i, vid in enumerate(graph.vertices)}
    n = len(index)
    out_degree = np.zeros(n, dtype=np.float64)
    for citing, _ in graph.edges:
        out_degree[index[citing]] += 1.0

    rows = np.fromiter((index[cited] for _, cited in graph.edges), dtype=np.int64, count=len(graph.edges))
    cols = np.fromiter((index[citing] for citing, _ in graph.edges), dtype=np.int64, count=len(graph.edges))
    data = 1.0 / out_degree[cols]
    transition = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    dangling = out_degree == 0

    x = np.full(n, 1.0 / n)
    teleport = (1.0 - damping) / n
    residual = float("inf")
    iterations = 0

    while iterations < max_iterations:
        iterations += 1
        dangling_mass = x[dangling].sum()
        new_x = damping * transition.dot(x) + (damping * dangling_mass / n + teleport)
        new_x /= new_x.sum()
        residual = float(np.abs(new_x - x).sum())
        x = new_x
        if residual <= tolerance:
            break

    converged = residual <= tolerance
    if converged:
        logger.info(f"PageRank converged in {iterations} iterations (residual {residual:.3e})")
    else:
        logger.warning(
            f"PageRank did not converge in {max_iterations} iterations (residual {residual:.3e} > {tolerance:.1e})"
        )

    scores = {vid: float(x[i]) for vid, i in index.items()}
    return PageRankScores(scores=scores, iterations=iterations, residual=residual, converged=converged)


def graph_stats(graph: CitationGraph) -> GraphStats:
    out_deg = graph.out_degrees()
    in_deg = graph.in_degrees()
    return GraphStats(
        vertices=len(graph.vertices),
        edges=len(graph.edges),
        in_degree_histogram=dict(Counter(in_deg.get(v, 0) for v in graph.vertices)),
        out_degree_histogram=dict(Counter(out_deg.get(v, 0) for v in graph.vertices)),
        removed=dict(graph.removed),
    )


def read_blocklist(path: Optional[Path]) -> Set[str]:
    if not path:
        return set()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Blocklist not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        publishers = {line.strip() for line in f if line.strip() and not line.startswith("#")}
    logger.info(f"Loaded {len(publishers)} blocklisted publishers from {path}")
    return publishers


def write_edges(path: Path, graph: CitationGraph) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for citing, cited in graph.edges:
            f.write(f"{citing}\t{cited}\n")
    return path


def read_edges(path: Path) -> CitationGraph:
    """Load an edge list; vertex metadata and removal counters are not recoverable from it."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Edge list not found: {path}")
    edges: List[Edge] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not all(fields):
                raise ValueError(f"{path}:{lineno}: expected 'citing_id<TAB>cited_id'")
            if fields[0] == fields[1]:
                raise ValueError(f"{path}:{lineno}: self-loop on {fields[0]!r}")
            edges.append((fields[0], fields[1]))
    return CitationGraph(vertices=[v for edge in edges for v in edge], edges=edges)


def write_pagerank(path: Path, scores: PageRankScores) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for record in scores.to_records():
            f.write(json.dumps(record) + "\n")
    return path


def read_pagerank(path: Path) -> Dict[str, float]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"PageRank file not found: {path}")
    scores: Dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                scores[record["id"]] = float(record["pagerank"])
    return scores
