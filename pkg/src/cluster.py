"""
Three-step news event clustering.

1. Articles with identical normalized titles collapse into mini-clusters.
2. Representative titles form a symmetric KNN similarity graph, which is
   split into balanced subgraphs by binary-searching an edge weight threshold.
3. Each subgraph is clustered by randomized greedy local search that
   maximizes total internal edge weight, charging a negative weight for
   every missing edge inside a cluster.
"""
import json
import logging
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components

from .config import (
    KNN_K,
    MIN_SIMILARITY,
    OMEGA,
    PASSES,
    SEED,
    SPLIT_EPSILON,
    SPLIT_LOWER,
    SPLIT_UPPER,
    TARGET_SIZE,
)
from .corpus import CorpusSnapshot
from .embed import EmbeddingProvider, EmbeddingVector, embed_titles, hash_dedup_titles

logger = logging.getLogger(__name__)

# Similarity block size for KNN, in matrix elements
KNN_BLOCK_ELEMENTS = 1 << 22
# Columns sampled per block row to bound its k-th best similarity from below
KNN_SAMPLE_COLUMNS = 1 << 13
# Largest expected fill of X @ X.T rows for which the sparse product is used
KNN_SPARSE_DENSITY = 0.05
# Smallest objective gain treated as an improvement
IMPROVEMENT_EPS = 1e-12


@dataclass
class SimilarityGraph:
    """
    Undirected weighted graph over vertex ids.

    Edges are stored once as index pairs (src < dst) into the sorted
    `vertices` list, with cosine similarity weights.
    """
    vertices: List[str]
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    k: Optional[int] = None

    @classmethod
    def from_edges(
        cls,
        vertices: Iterable[str],
        edges: Iterable[Tuple[str, str, float]],
        k: Optional[int] = None,
    ) -> "SimilarityGraph":
        ordered = sorted(set(vertices))
        index = {vid: i for i, vid in enumerate(ordered)}
        pairs: Dict[Tuple[int, int], float] = {}
        for a, b, w in edges:
            if a == b:
                raise ValueError(f"Self-edge on {a!r}")
            i, j = sorted((index[a], index[b]))
            pairs[(i, j)] = float(w)
        keys = sorted(pairs)
        return cls(
            vertices=ordered,
            src=np.array([i for i, _ in keys], dtype=np.int64),
            dst=np.array([j for _, j in keys], dtype=np.int64),
            weight=np.array([pairs[key] for key in keys], dtype=np.float64),
            k=k,
        )

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])

    def edge_list(self) -> List[Tuple[str, str, float]]:
        return [
            (self.vertices[i], self.vertices[j], float(w))
            for i, j, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist())
        ]

    def adjacency(self) -> List[Dict[int, float]]:
        adj: List[Dict[int, float]] = [dict() for _ in self.vertices]
        for i, j, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()):
            adj[i][j] = w
            adj[j][i] = w
        return adj

    def subgraph(self, vertex_ids: Sequence[str]) -> "SimilarityGraph":
        return self.partition([vertex_ids])[0]

    def partition(self, pieces: Sequence[Sequence[str]]) -> List["SimilarityGraph"]:
        """
        Induced subgraphs of disjoint vertex sets in one pass over the edges.

        Each edge is labelled with the piece holding both its ends (or
        dropped), edges are stable-sorted by label and sliced per piece, so
        every subgraph keeps the (src, dst) order of the parent.
        """
        index = {vid: i for i, vid in enumerate(self.vertices)}
        piece_of = np.full(len(self.vertices), -1, dtype=np.int64)
        local = np.zeros(len(self.vertices), dtype=np.int64)
        members: List[np.ndarray] = []
        for label, vertex_ids in enumerate(pieces):
            idx = np.unique(np.fromiter((index[v] for v in vertex_ids), dtype=np.int64, count=len(vertex_ids)))
            if np.any(piece_of[idx] >= 0):
                raise ValueError(f"Piece {label} overlaps an earlier piece")
            piece_of[idx] = label
            local[idx] = np.arange(idx.shape[0])
            members.append(idx)

        edge_piece = piece_of[self.src]
        inside = (edge_piece >= 0) & (edge_piece == piece_of[self.dst])
        order = np.argsort(edge_piece[inside], kind="stable")
        labels = edge_piece[inside][order]
        src = local[self.src[inside][order]]
        dst = local[self.dst[inside][order]]
        weight = self.weight[inside][order]
        bounds = np.searchsorted(labels, np.arange(len(pieces) + 1))

        return [
            SimilarityGraph(
                vertices=[self.vertices[i] for i in idx.tolist()],
                src=src[a:b],
                dst=dst[a:b],
                weight=weight[a:b],
                k=self.k,
            )
            for idx, a, b in zip(members, bounds[:-1].tolist(), bounds[1:].tolist())
        ]


@dataclass
class SplitParams:
    target_size: int = TARGET_SIZE
    epsilon: float = SPLIT_EPSILON
    lower: float = SPLIT_LOWER
    upper: float = SPLIT_UPPER

    def __post_init__(self):
        if self.target_size < 1:
            raise ValueError(f"target_size must be positive, got {self.target_size}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.lower < self.upper <= 1.0:
            raise ValueError(f"split bounds must satisfy 0 <= lower < upper <= 1, got [{self.lower}, {self.upper}]")


@dataclass
class LocalParams:
    omega: float = OMEGA
    passes: int = PASSES
    seed: int = SEED

    def __post_init__(self):
        if self.omega >= 0:
            raise ValueError(f"omega must be negative, got {self.omega}")
        if self.passes < 1:
            raise ValueError(f"passes must be >= 1, got {self.passes}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass
class ClusterAssignment:
    assignment: Dict[str, int] = field(default_factory=dict)
    objective: float = 0.0

    def clusters(self) -> Dict[int, List[str]]:
        groups: Dict[int, List[str]] = defaultdict(list)
        for vid, cid in sorted(self.assignment.items()):
            groups[cid].append(vid)
        return dict(sorted(groups.items()))

    @property
    def num_clusters(self) -> int:
        return len(set(self.assignment.values()))


@dataclass
class PassResult:
    labels: List[int]
    objective: float
    trace: List[float]


def _as_matrix(vectors: Mapping[str, Union[EmbeddingVector, np.ndarray]]) -> Tuple[List[str], np.ndarray]:
    ids = sorted(vectors)
    if not ids:
        return ids, np.zeros((0, 0))
    rows = [v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64) for v in (vectors[i] for i in ids)]
    dims = {row.shape[0] for row in rows}
    if len(dims) != 1:
        raise ValueError(f"All vectors must share one dimension, got {sorted(dims)}")
    return ids, np.vstack(rows)


def _top_k_per_row(rows: np.ndarray, cols: np.ndarray, sims: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    # Best similarity first; ties go to the smallest column
    order = np.lexsort((cols, -sims, rows))
    rows, cols = rows[order], cols[order]
    rank = np.arange(rows.shape[0]) - np.searchsorted(rows, rows)
    return rows[rank < k], cols[rank < k]


def _knn_block(matrix: np.ndarray, start: int, stop: int, k: int, min_similarity: float) -> Tuple[np.ndarray, np.ndarray]:
    n = matrix.shape[0]
    sims = matrix[start:stop] @ matrix.T
    rows = np.arange(stop - start)
    sims[rows, rows + start] = -np.inf

    floor = np.full(stop - start, min_similarity, dtype=np.float64)
    if k < n - 1:
        # The k-th best of any column subset is a lower bound for the whole row
        sample = sims[:, :: max(1, n // KNN_SAMPLE_COLUMNS)]
        if sample.shape[1] >= k:
            cut = sample.shape[1] - k
            floor = np.maximum(floor, np.partition(sample, cut, axis=1)[:, cut])

    r, c = np.nonzero(sims >= floor[:, None])
    r, c = _top_k_per_row(r, c, sims[r, c], k)
    r = r + start
    return np.minimum(r, c), np.maximum(r, c)


def _sparse_knn_block(
    operands: Tuple[csr_matrix, csr_matrix], start: int, stop: int, k: int, min_similarity: float
) -> Tuple[np.ndarray, np.ndarray]:
    # Pairs sharing no nonzero coordinate score 0 and never pass a positive floor
    rows_matrix, transposed = operands
    sims = (rows_matrix[start:stop] @ transposed).tocsr()
    r = np.repeat(np.arange(stop - start, dtype=np.int64), np.diff(sims.indptr))
    c = sims.indices.astype(np.int64)
    keep = (sims.data >= min_similarity) & (c != r + start)
    r, c = _top_k_per_row(r[keep], c[keep], sims.data[keep], k)
    r = r + start
    return np.minimum(r, c), np.maximum(r, c)


def expected_product_fill(matrix: np.ndarray) -> float:
    """Mean fraction of nonzeros in a row of `matrix @ matrix.T`, assuming independent columns."""
    n = matrix.shape[0]
    if n == 0:
        return 0.0
    column_nnz = np.count_nonzero(matrix, axis=0).astype(np.float64)
    return float(min(1.0, np.dot(column_nnz, column_nnz) / (n * n)))


def build_knn_graph(
    vectors: Mapping[str, Union[EmbeddingVector, np.ndarray]],
    k: int = KNN_K,
    min_similarity: float = MIN_SIMILARITY,
    workers: int = 1,
) -> SimilarityGraph:
    """
    Exact KNN graph under cosine similarity, union-symmetrized.

    Each vertex links to its k most similar other vertices whose similarity
    is at least `min_similarity`; ties go to the smaller id. Vectors are
    assumed unit-norm.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ids, matrix = _as_matrix(vectors)
    return knn_from_matrix(ids, matrix, k, min_similarity, workers)


def knn_from_matrix(
    ids: List[str],
    matrix: np.ndarray,
    k: int = KNN_K,
    min_similarity: float = MIN_SIMILARITY,
    workers: int = 1,
) -> SimilarityGraph:
    """Same as build_knn_graph for row-aligned ids (sorted) and an (n, D) matrix."""
    n = len(ids)
    empty = np.zeros(0, dtype=np.int64)
    if n < 2:
        return SimilarityGraph(vertices=list(ids), src=empty, dst=empty, weight=np.zeros(0), k=k)

    kk = min(k, n - 1)
    fill = expected_product_fill(matrix)
    if min_similarity > 0 and fill <= KNN_SPARSE_DENSITY:
        sparse = csr_matrix(matrix)
        run_block, operand = _sparse_knn_block, (sparse, sparse.T.tocsr())
        block = max(1, int(KNN_BLOCK_ELEMENTS // max(1.0, fill * n)))
    else:
        run_block, operand = _knn_block, matrix
        block = max(1, KNN_BLOCK_ELEMENTS // n)
    starts = list(range(0, n, block))
    logger.debug(f"KNN: {run_block.__name__} over {len(starts)} blocks (expected product fill {fill:.3f})")

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [
                executor.submit(run_block, operand, s, min(s + block, n), kk, min_similarity)
                for s in starts
            ]
            parts = [future.result() for future in futures]
    else:
        parts = [run_block(operand, s, min(s + block, n), kk, min_similarity) for s in starts]

    lo = np.concatenate([p[0] for p in parts])
    hi = np.concatenate([p[1] for p in parts])
    keys = np.unique(lo.astype(np.int64) * n + hi)
    src, dst = keys // n, keys % n
    weight = np.clip(np.einsum("ij,ij->i", matrix[src], matrix[dst]), -1.0, 1.0)

    logger.info(f"KNN graph: {n} vertices, {len(keys)} edges (k={kk}, min_similarity={min_similarity})")
    return SimilarityGraph(vertices=list(ids), src=src, dst=dst, weight=weight, k=k)


def _components(size: int, src: np.ndarray, dst: np.ndarray) -> Tuple[int, np.ndarray]:
    csgraph = coo_matrix((np.ones(src.shape[0]), (src, dst)), shape=(size, size)).tocsr()
    return connected_components(csgraph, directed=False)


def find_subgraphs(graph: SimilarityGraph, params: SplitParams) -> List[List[str]]:
    """
    Split the graph into disjoint vertex sets of at most `target_size`.

    For an oversized component, binary search finds the lowest threshold in
    (lower, upper) at which dropping lighter edges disconnects it. Pieces
    that fit are emitted; larger pieces are split again with the threshold
    as their new lower bound. A component that no tried threshold disconnects before
    the bounds narrow to epsilon is emitted as is.
    """
    n = len(graph.vertices)
    if n == 0:
        return []
    pieces: List[np.ndarray] = []
    oversized = 0

    # Work items: (vertex indices sorted, edge indices inside, lower bound)
    pending = [(np.arange(n), np.arange(graph.num_edges), params.lower)]
    while pending:
        members, edge_idx, lower = pending.pop()
        if members.shape[0] <= params.target_size:
            pieces.append(members)
            continue

        local_src = np.searchsorted(members, graph.src[edge_idx])
        local_dst = np.searchsorted(members, graph.dst[edge_idx])
        weights = graph.weight[edge_idx]

        a, b = lower, params.upper
        found = None
        while b - a > params.epsilon:
            m = (a + b) / 2
            keep = weights >= m
            count, labels = _components(members.shape[0], local_src[keep], local_dst[keep])
            if count > 1:
                b = m
                found = (m, labels)
            else:
                a = m

        if found is None:
            oversized += 1
            pieces.append(members)
            continue

        threshold, labels = found
        kept = edge_idx[weights >= threshold]
        kept_labels = labels[np.searchsorted(members, graph.src[kept])]
        order = np.argsort(kept_labels, kind="stable")
        kept, kept_labels = kept[order], kept_labels[order]
        bounds = np.searchsorted(kept_labels, np.arange(labels.max() + 2))

        for label in range(labels.max() + 1):
            component = members[labels == label]
            if component.shape[0] <= params.target_size:
                pieces.append(component)
            else:
                pending.append((component, kept[bounds[label]:bounds[label + 1]], threshold))

    pieces.sort(key=lambda p: int(p[0]))
    if oversized:
        logger.warning(f"{oversized} subgraphs exceed target size {params.target_size} (no separating threshold)")
    logger.info(f"Split {n} vertices into {len(pieces)} subgraphs (target size {params.target_size})")
    return [[graph.vertices[i] for i in piece.tolist()] for piece in pieces]


def cluster_weights(graph: SimilarityGraph, assignment: Mapping[str, int], omega: float) -> Dict[int, float]:
    """Internal weight w_c of every cluster: present edge weights plus omega per missing pair."""
    if not graph.vertices:
        return {}
    clusters, labels = np.unique(
        np.array([assignment[v] for v in graph.vertices], dtype=np.int64), return_inverse=True
    )
    sizes = np.bincount(labels, minlength=clusters.shape[0])
    inside = labels[graph.src] == labels[graph.dst]
    owner = labels[graph.src[inside]]
    present = np.bincount(owner, weights=graph.weight[inside], minlength=clusters.shape[0])
    edges = np.bincount(owner, minlength=clusters.shape[0])

    return {
        int(c): float(present[i]) + omega * int(sizes[i] * (sizes[i] - 1) // 2 - edges[i])
        for i, c in enumerate(clusters.tolist())
    }


def cluster_objective(graph: SimilarityGraph, assignment: Mapping[str, int], omega: float) -> float:
    return float(sum(cluster_weights(graph, assignment, omega).values()))


def _canonical_labels(labels: Sequence[int]) -> List[int]:
    remap: Dict[int, int] = {}
    return [remap.setdefault(label, len(remap)) for label in labels]


def local_pass(adj: List[Dict[int, float]], omega: float, order: Sequence[int]) -> PassResult:
    """
    One randomized pass of greedy local clustering from all-singletons.

    Vertices are swept in `order`; each moves to the neighboring cluster (or
    a fresh singleton) with the largest strictly positive gain. When sweeps
    stop improving, adjacent cluster pairs whose union gains weight are
    merged and sweeping resumes. `trace` records the objective after every
    accepted change.
    """
    n = len(adj)
    labels = list(range(n))
    sizes = [1] * n
    free: List[int] = []
    objective = 0.0
    trace: List[float] = []

    while True:
        moved = True
        while moved:
            moved = False
            for v in order:
                current = labels[v]
                acc: Dict[int, float] = defaultdict(float)
                cnt: Dict[int, int] = defaultdict(int)
                for u, w in adj[v].items():
                    acc[labels[u]] += w
                    cnt[labels[u]] += 1

                stay = acc.get(current, 0.0) + omega * (sizes[current] - 1 - cnt.get(current, 0))
                best_gain, best = IMPROVEMENT_EPS, None
                for c in acc:
                    if c == current:
                        continue
                    gain = acc[c] + omega * (sizes[c] - cnt[c]) - stay
                    if gain > best_gain or (gain == best_gain and best is not None and c < best):
                        best_gain, best = gain, c
                if best is None and sizes[current] > 1 and -stay > IMPROVEMENT_EPS:
                    best_gain, best = -stay, free.pop()

                if best is not None:
                    sizes[current] -= 1
                    if sizes[current] == 0:
                        free.append(current)
                    sizes[best] += 1
                    labels[v] = best
                    objective += best_gain
                    trace.append(objective)
                    moved = True

        between_w: Dict[Tuple[int, int], float] = defaultdict(float)
        between_n: Dict[Tuple[int, int], int] = defaultdict(int)
        for v in range(n):
            for u, w in adj[v].items():
                a, b = labels[v], labels[u]
                if v < u and a != b:
                    key = (a, b) if a < b else (b, a)
                    between_w[key] += w
                    between_n[key] += 1

        candidates = sorted(
            ((between_w[key] + omega * (sizes[key[0]] * sizes[key[1]] - between_n[key]), key) for key in between_w),
            key=lambda item: (-item[0], item[1]),
        )
        touched = set()
        merged = False
        for gain, (a, b) in candidates:
            if gain <= IMPROVEMENT_EPS:
                break
            if a in touched or b in touched:
                continue
            touched.update((a, b))
            for v in range(n):
                if labels[v] == b:
                    labels[v] = a
            sizes[a] += sizes[b]
            sizes[b] = 0
            free.append(b)
            objective += gain
            trace.append(objective)
            merged = True

        if not merged:
            break

    return PassResult(labels=_canonical_labels(labels), objective=objective, trace=trace)


def greedy_local_cluster(subgraph: SimilarityGraph, params: LocalParams) -> ClusterAssignment:
    """Best of `params.passes` seeded local passes; ties keep the earlier pass."""
    n = len(subgraph.vertices)
    if n == 0:
        return ClusterAssignment()
    if subgraph.num_edges == 0:
        # Without edges every pass ends in singletons
        return ClusterAssignment(assignment={v: i for i, v in enumerate(subgraph.vertices)}, objective=0.0)

    adj = subgraph.adjacency()
    best: Optional[ClusterAssignment] = None
    for r in range(params.passes):
        rng = np.random.default_rng([params.seed, r])
        result = local_pass(adj, params.omega, rng.permutation(n).tolist())
        assignment = dict(zip(subgraph.vertices, result.labels))
        objective = cluster_objective(subgraph, assignment, params.omega)
        if best is None or objective > best.objective:
            best = ClusterAssignment(assignment=assignment, objective=objective)

    logger.debug(f"Local clustering: {n} vertices -> {best.num_clusters} clusters (objective {best.objective:.4f})")
    return best


def three_step_cluster(
    corpus: CorpusSnapshot,
    provider: EmbeddingProvider,
    k: int = KNN_K,
    split: Optional[SplitParams] = None,
    local: Optional[LocalParams] = None,
    min_similarity: float = MIN_SIMILARITY,
    workers: int = 1,
    timings: Optional[Dict[str, float]] = None,
    subgraph_dir: Optional[Path] = None,
) -> ClusterAssignment:
    """
    Title dedup, KNN graph, balanced split and local clustering, expanded
    back to article ids. Cluster ids are numbered by each cluster's smallest
    article id.
    """
    split = split or SplitParams()
    local = local or LocalParams()
    timings = timings if timings is not None else {}
    if not corpus.articles:
        return ClusterAssignment()

    started = time.perf_counter()
    minis = hash_dedup_titles(corpus)
    timings["dedup"] = time.perf_counter() - started

    started = time.perf_counter()
    reps = [mini.representative_id for mini in minis]
    matrix = embed_titles([mini.normalized_title for mini in minis], provider)
    timings["embed"] = time.perf_counter() - started

    started = time.perf_counter()
    graph = knn_from_matrix(reps, matrix, k, min_similarity, workers)
    timings["knn"] = time.perf_counter() - started

    started = time.perf_counter()
    subgraphs = find_subgraphs(graph, split)
    timings["split"] = time.perf_counter() - started
    if subgraph_dir is not None:
        write_subgraphs(subgraph_dir, graph, subgraphs)

    started = time.perf_counter()
    logger.info(f"Clustering {len(subgraphs)} subgraphs with {workers} worker(s)")
    if workers > 1 and len(subgraphs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(greedy_local_cluster, piece, local) for piece in graph.partition(subgraphs)]
            results = [future.result() for future in futures]
    else:
        results = [greedy_local_cluster(piece, local) for piece in graph.partition(subgraphs)]
    timings["local"] = time.perf_counter() - started

    members = {mini.representative_id: mini.article_ids for mini in minis}
    groups: List[List[str]] = []
    for result in results:
        for rep_ids in result.clusters().values():
            groups.append(sorted(aid for rep in rep_ids for aid in members[rep]))
    groups.sort(key=lambda g: g[0])

    assignment = {aid: cid for cid, group in enumerate(groups) for aid in group}
    objective = float(sum(result.objective for result in results))
    logger.info(f"Three-step clustering: {len(assignment)} articles -> {len(groups)} clusters")
    return ClusterAssignment(assignment=assignment, objective=objective)


def write_clusters(path: Path, assignment: ClusterAssignment) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for vid, cid in sorted(assignment.assignment.items()):
            f.write(json.dumps({"id": vid, "cluster": cid}) + "\n")
    return path


def read_clusters(path: Path) -> ClusterAssignment:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Cluster file not found: {path}")
    assignment: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                assignment[record["id"]] = int(record["cluster"])
    return ClusterAssignment(assignment=assignment)


def write_subgraphs(directory: Path, graph: SimilarityGraph, subgraphs: List[List[str]]) -> None:
    """Debug dump: one `a<TAB>b<TAB>weight` file per subgraph."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, piece in enumerate(graph.partition(subgraphs)):
        with open(directory / f"subgraph_{i:05d}.tsv", "w", encoding="utf-8") as f:
            for a, b, w in piece.edge_list():
                f.write(f"{a}\t{b}\t{w!r}\n")
