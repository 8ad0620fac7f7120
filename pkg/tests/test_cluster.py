from itertools import combinations

import numpy as np
import pytest

from src.cluster import (
    ClusterAssignment,
    LocalParams,
    SimilarityGraph,
    SplitParams,
    build_knn_graph,
    cluster_objective,
    cluster_weights,
    expected_product_fill,
    find_subgraphs,
    greedy_local_cluster,
    local_pass,
    read_clusters,
    three_step_cluster,
    write_clusters,
    write_subgraphs,
)
from src.embed import FeatureHashProvider
from src.evaluation import generate_synthetic_corpus

from conftest import make_article, snapshot_of


def unit_vectors(rng: np.random.Generator, n: int, dim: int = 8) -> dict:
    raw = rng.normal(size=(n, dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return {f"v{i:02d}": raw[i] for i in range(n)}


def brute_force_knn(vectors: dict, k: int, min_similarity: float) -> set:
    ids = sorted(vectors)
    edges = set()
    for a in ids:
        others = sorted(
            ((float(np.dot(vectors[a], vectors[b])), b) for b in ids if b != a),
            key=lambda item: (-item[0], item[1]),
        )
        for sim, b in others[:k]:
            if sim >= min_similarity:
                edges.add(tuple(sorted((a, b))))
    return edges


def clique(prefix: str, size: int, weight: float):
    names = [f"{prefix}{i}" for i in range(size)]
    return names, [(a, b, weight) for a, b in combinations(names, 2)]


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partition in set_partitions(rest):
        for i in range(len(partition)):
            yield partition[:i] + [[first] + partition[i]] + partition[i + 1:]
        yield [[first]] + partition


class StubProvider:
    """Orthogonal basis vector per known title; unknown titles share the last axis."""
    name = "stub"
    dimension = 4

    def __init__(self, axes: dict):
        self.axes = axes

    def embed(self, normalized_title: str) -> np.ndarray:
        vector = np.zeros(self.dimension)
        vector[self.axes.get(normalized_title, self.dimension - 1)] = 1.0
        return vector


def example_graph() -> SimilarityGraph:
    return SimilarityGraph.from_edges("ABCDEF", [
        ("A", "B", 0.7), ("A", "D", 0.8), ("B", "C", 0.8), ("B", "D", 0.9), ("C", "D", 0.95),
        ("E", "F", 0.8), ("A", "E", 0.1), ("D", "F", 0.1),
    ])


def test_knn_small_inputs_give_complete_graph() -> None:
    vectors = unit_vectors(np.random.default_rng(0), 5)
    graph = build_knn_graph(vectors, k=4, min_similarity=-1.0)
    assert graph.num_edges == 10


def test_knn_identical_vectors_weight_one() -> None:
    v = np.array([0.6, 0.8])
    graph = build_knn_graph({"a": v, "b": v.copy()}, k=1, min_similarity=0.0)
    assert graph.edge_list() == [("a", "b", pytest.approx(1.0))]


def test_knn_matches_brute_force() -> None:
    rng = np.random.default_rng(42)
    for k, min_similarity in [(3, -1.0), (3, 0.2), (1, -1.0), (5, 0.0)]:
        vectors = unit_vectors(rng, 10)
        graph = build_knn_graph(vectors, k=k, min_similarity=min_similarity)
        assert {(a, b) for a, b, _ in graph.edge_list()} == brute_force_knn(vectors, k, min_similarity)


def test_knn_graph_invariants() -> None:
    rng = np.random.default_rng(9)
    vectors = unit_vectors(rng, 60, dim=4)
    k = 4
    graph = build_knn_graph(vectors, k=k, min_similarity=-1.0)
    degree = np.bincount(np.concatenate([graph.src, graph.dst]), minlength=60)
    assert degree.min() >= k
    assert graph.num_edges <= 60 * k
    assert np.all(graph.src < graph.dst)
    for a, b, w in graph.edge_list():
        assert w == pytest.approx(float(np.dot(vectors[a], vectors[b])))


def test_knn_ties_go_to_smaller_id() -> None:
    base = np.array([1.0, 0.0])
    same = np.array([0.0, 1.0])
    graph = build_knn_graph({"q": base, "b": same, "a": same.copy(), "c": same.copy()}, k=1, min_similarity=-1.0)
    edges = {(a, b) for a, b, _ in graph.edge_list()}
    # q's single neighbour among three equally distant vectors is "a"
    assert ("a", "q") in edges
    assert ("b", "q") not in edges and ("c", "q") not in edges


def test_knn_block_threads_agree(monkeypatch) -> None:
    monkeypatch.setattr("src.cluster.KNN_BLOCK_ELEMENTS", 200)
    rng = np.random.default_rng(4)
    vectors = unit_vectors(rng, 50)
    single = build_knn_graph(vectors, k=3, min_similarity=0.0, workers=1)
    threaded = build_knn_graph(vectors, k=3, min_similarity=0.0, workers=4)
    assert single.edge_list() == threaded.edge_list()


def sparse_unit_vectors(rng: np.random.Generator, n: int, dim: int = 32, nonzeros: int = 3) -> dict:
    vectors = {}
    for i in range(n):
        v = np.zeros(dim)
        v[rng.choice(dim, size=nonzeros, replace=False)] = rng.normal(size=nonzeros)
        vectors[f"s{i:03d}"] = v / np.linalg.norm(v)
    return vectors


def test_knn_with_sampled_row_bound_matches_brute_force(monkeypatch) -> None:
    # 80 columns sampled every 10th leaves 8 per row, enough to bound k=5
    monkeypatch.setattr("src.cluster.KNN_SAMPLE_COLUMNS", 8)
    monkeypatch.setattr("src.cluster.KNN_BLOCK_ELEMENTS", 500)
    rng = np.random.default_rng(31)
    for min_similarity in (-1.0, 0.0, 0.3):
        vectors = unit_vectors(rng, 80, dim=6)
        graph = build_knn_graph(vectors, k=5, min_similarity=min_similarity)
        assert {(a, b) for a, b, _ in graph.edge_list()} == brute_force_knn(vectors, 5, min_similarity)


def test_sparse_knn_matches_brute_force(monkeypatch) -> None:
    import src.cluster as cluster

    calls = []
    sparse_block = cluster._sparse_knn_block
    monkeypatch.setattr(cluster, "_sparse_knn_block", lambda *args: calls.append(args[1]) or sparse_block(*args))
    monkeypatch.setattr(cluster, "KNN_SPARSE_DENSITY", 1.0)
    monkeypatch.setattr(cluster, "KNN_BLOCK_ELEMENTS", 300)

    rng = np.random.default_rng(17)
    vectors = sparse_unit_vectors(rng, 90)
    for k in (1, 4, 89):
        graph = build_knn_graph(vectors, k=k, min_similarity=0.05)
        assert {(a, b) for a, b, _ in graph.edge_list()} == brute_force_knn(vectors, k, 0.05)
        for a, b, w in graph.edge_list():
            assert w == pytest.approx(float(np.dot(vectors[a], vectors[b])))
    assert len(calls) > 3

    threaded = build_knn_graph(vectors, k=4, min_similarity=0.05, workers=3)
    assert threaded.edge_list() == build_knn_graph(vectors, k=4, min_similarity=0.05).edge_list()


def test_non_positive_floor_keeps_the_dense_path(monkeypatch) -> None:
    import src.cluster as cluster

    monkeypatch.setattr(cluster, "KNN_SPARSE_DENSITY", 1.0)
    monkeypatch.setattr(cluster, "_sparse_knn_block", lambda *args: pytest.fail("sparse path used"))
    vectors = sparse_unit_vectors(np.random.default_rng(2), 30)
    graph = build_knn_graph(vectors, k=3, min_similarity=0.0)
    assert {(a, b) for a, b, _ in graph.edge_list()} == brute_force_knn(vectors, 3, 0.0)


def test_expected_product_fill() -> None:
    assert expected_product_fill(np.zeros((0, 4))) == 0.0
    assert expected_product_fill(np.ones((10, 4))) == 1.0
    # every row on its own axis: each row only meets itself
    assert expected_product_fill(np.eye(50)) == pytest.approx(1 / 50)

    provider = FeatureHashProvider(dimension=1 << 14)
    distinct = np.vstack([provider.embed(f"alpha{i} beta{i} gamma{i}") for i in range(200)])
    assert expected_product_fill(distinct) < 0.05
    # a word every title shares makes every pair meet
    shared = np.vstack([provider.embed(f"breaking alpha{i} beta{i}") for i in range(200)])
    assert expected_product_fill(shared) == 1.0


def test_partition_matches_induced_subgraphs() -> None:
    rng = np.random.default_rng(12)
    names = [f"v{i:02d}" for i in range(40)]
    edges = [(a, b, float(rng.uniform())) for a, b in combinations(names, 2) if rng.random() < 0.2]
    graph = SimilarityGraph.from_edges(names, edges)

    shuffled = rng.permutation(names).tolist()
    pieces = [shuffled[:5], shuffled[5:23], shuffled[23:24], shuffled[24:]]
    parts = graph.partition(pieces)

    assert len(parts) == len(pieces)
    for piece, part in zip(pieces, parts):
        members = set(piece)
        expected = SimilarityGraph.from_edges(piece, [e for e in edges if e[0] in members and e[1] in members])
        assert part.vertices == sorted(piece)
        assert part.edge_list() == expected.edge_list()
        assert np.all(part.src < part.dst)
    assert graph.subgraph(pieces[1]).edge_list() == parts[1].edge_list()
    # vertices left out of every piece drop their edges
    assert sum(p.num_edges for p in graph.partition(pieces[:2])) == parts[0].num_edges + parts[1].num_edges


def test_partition_rejects_overlapping_pieces() -> None:
    graph = example_graph()
    with pytest.raises(ValueError, match="overlaps"):
        graph.partition([["A", "B"], ["B", "C"]])
    assert graph.partition([]) == []


def test_find_subgraphs_small_graph_is_one_piece() -> None:
    names, edges = clique("v", 4, 0.5)
    graph = SimilarityGraph.from_edges(names, edges)
    assert find_subgraphs(graph, SplitParams(target_size=4)) == [sorted(names)]


def test_find_subgraphs_splits_two_cliques_at_bridge() -> None:
    left, left_edges = clique("a", 5, 0.9)
    right, right_edges = clique("b", 5, 0.9)
    graph = SimilarityGraph.from_edges(left + right, left_edges + right_edges + [("a0", "b0", 0.2)])
    assert find_subgraphs(graph, SplitParams(target_size=5)) == [left, right]


def test_find_subgraphs_emits_unsplittable_clique_oversized() -> None:
    names, edges = clique("v", 6, 1.0)
    graph = SimilarityGraph.from_edges(names, edges)
    assert find_subgraphs(graph, SplitParams(target_size=3)) == [names]


def test_find_subgraphs_always_partitions() -> None:
    rng = np.random.default_rng(17)
    for _ in range(50):
        n = int(rng.integers(1, 60))
        names = [f"v{i:02d}" for i in range(n)]
        edges = [(a, b, float(rng.uniform())) for a, b in combinations(names, 2) if rng.random() < 0.2]
        graph = SimilarityGraph.from_edges(names, edges)
        pieces = find_subgraphs(graph, SplitParams(target_size=int(rng.integers(1, 15))))
        flat = [v for piece in pieces for v in piece]
        assert sorted(flat) == names
        assert len(flat) == len(set(flat))


def test_split_params_validation() -> None:
    with pytest.raises(ValueError):
        SplitParams(target_size=0)
    with pytest.raises(ValueError):
        SplitParams(lower=0.6, upper=0.5)
    with pytest.raises(ValueError):
        LocalParams(omega=0.0)
    with pytest.raises(ValueError):
        LocalParams(passes=0)


def test_local_clustering_reproduces_worked_example() -> None:
    graph = example_graph()
    result = greedy_local_cluster(graph, LocalParams(omega=-0.1, passes=8, seed=0))
    clusters = sorted(result.clusters().values())
    assert clusters == [["A", "B", "C", "D"], ["E", "F"]]

    weights = cluster_weights(graph, result.assignment, -0.1)
    by_members = {tuple(members): weights[cid] for cid, members in result.clusters().items()}
    # five present edges and one missing pair (A, C)
    assert by_members[("A", "B", "C", "D")] == pytest.approx(0.7 + 0.8 + 0.8 + 0.9 + 0.95 - 0.1)
    assert by_members[("E", "F")] == pytest.approx(0.8)
    assert result.objective == pytest.approx(4.85)


def test_local_clustering_trivial_cases() -> None:
    single = greedy_local_cluster(SimilarityGraph.from_edges(["a"], []), LocalParams())
    assert single.assignment == {"a": 0}
    assert single.objective == 0.0

    pair = greedy_local_cluster(SimilarityGraph.from_edges(["a", "b"], [("a", "b", 0.9)]), LocalParams())
    assert pair.assignment["a"] == pair.assignment["b"]
    assert pair.objective == pytest.approx(0.9)


def test_local_pass_trace_is_increasing_and_objective_recomputes() -> None:
    rng = np.random.default_rng(21)
    for _ in range(40):
        n = int(rng.integers(2, 20))
        names = [f"v{i:02d}" for i in range(n)]
        edges = [(a, b, float(rng.uniform(-0.2, 1))) for a, b in combinations(names, 2) if rng.random() < 0.4]
        graph = SimilarityGraph.from_edges(names, edges)
        result = local_pass(graph.adjacency(), -0.1, rng.permutation(n).tolist())
        assert all(later > earlier for earlier, later in zip(result.trace, result.trace[1:]))
        assignment = dict(zip(graph.vertices, result.labels))
        assert cluster_objective(graph, assignment, -0.1) == pytest.approx(result.objective, abs=1e-9)


def test_local_clustering_is_deterministic_for_a_seed() -> None:
    rng = np.random.default_rng(8)
    names = [f"v{i:02d}" for i in range(25)]
    edges = [(a, b, float(rng.uniform())) for a, b in combinations(names, 2) if rng.random() < 0.3]
    graph = SimilarityGraph.from_edges(names, edges)
    params = LocalParams(seed=13)
    assert greedy_local_cluster(graph, params) == greedy_local_cluster(graph, params)


def test_local_clustering_near_exhaustive_optimum() -> None:
    rng = np.random.default_rng(2024)
    omega = -0.1
    for trial in range(500):
        n = int(rng.integers(2, 9))
        names = [chr(ord("a") + i) for i in range(n)]
        edges = [(a, b, float(rng.uniform())) for a, b in combinations(names, 2) if rng.random() < 0.6]
        graph = SimilarityGraph.from_edges(names, edges)

        best = max(
            cluster_objective(graph, {v: cid for cid, block in enumerate(p) for v in block}, omega)
            for p in set_partitions(names)
        )
        found = greedy_local_cluster(graph, LocalParams(omega=omega, passes=8, seed=trial)).objective
        assert found >= 0.9 * best - 1e-12, f"trial {trial}: {found} vs optimum {best}"


def test_three_step_identical_titles_form_one_cluster() -> None:
    corpus = snapshot_of([make_article(f"a{i}", f"p{i}", title="Same Story!") for i in range(4)])
    result = three_step_cluster(corpus, FeatureHashProvider())
    assert set(result.assignment.values()) == {0}
    assert sorted(result.assignment) == ["a0", "a1", "a2", "a3"]


def test_three_step_empty_corpus() -> None:
    assert three_step_cluster(snapshot_of([]), FeatureHashProvider()) == ClusterAssignment()


def test_three_step_recovers_two_synthetic_events(tmp_path) -> None:
    synthetic = generate_synthetic_corpus(events=2, followers=5, seed=3)
    corpus = snapshot_of(synthetic.articles)
    timings = {}
    result = three_step_cluster(corpus, FeatureHashProvider(), timings=timings, subgraph_dir=tmp_path / "subgraphs")

    groups = sorted(result.clusters().values())
    expected = sorted(
        sorted(aid for aid, event in synthetic.event_of.items() if event == e) for e in (0, 1)
    )
    assert groups == expected
    assert set(timings) == {"dedup", "embed", "knn", "split", "local"}
    assert list((tmp_path / "subgraphs").glob("subgraph_*.tsv"))


def test_three_step_keeps_mini_clusters_together_and_numbers_by_smallest_id() -> None:
    corpus = snapshot_of([
        make_article("z", "p1", title="Flood warning issued for river towns"),
        make_article("b", "p2", title="flood warning issued for river towns!"),
        make_article("m", "p3", title="Chip shortage eases as factories reopen"),
    ])
    result = three_step_cluster(corpus, StubProvider({"flood warning issued for river towns": 0}))
    assert result.assignment["z"] == result.assignment["b"]
    assert result.assignment["b"] == 0
    assert result.assignment["m"] == 1


def test_three_step_is_identical_across_worker_counts() -> None:
    synthetic = generate_synthetic_corpus(events=30, followers=4, seed=5)
    corpus = snapshot_of(synthetic.articles)
    split = SplitParams(target_size=20)
    single = three_step_cluster(corpus, FeatureHashProvider(), split=split, workers=1)
    threaded = three_step_cluster(corpus, FeatureHashProvider(), split=split, workers=4)
    assert single == threaded


def test_cluster_file_round_trip_and_subgraph_dump(tmp_path) -> None:
    assignment = ClusterAssignment(assignment={"b": 1, "a": 0, "c": 1}, objective=1.5)
    path = write_clusters(tmp_path / "clusters.jsonl", assignment)
    assert path.read_text().splitlines()[0] == '{"id": "a", "cluster": 0}'
    assert read_clusters(path).assignment == assignment.assignment

    graph = example_graph()
    write_subgraphs(tmp_path / "dump", graph, [["A", "B", "C", "D"], ["E", "F"]])
    assert (tmp_path / "dump" / "subgraph_00001.tsv").read_text() == "E\tF\t0.8\n"
