from .corpus import Article, CorpusSnapshot, load_corpus
from .citation import CitationGraph, PageRankScores, build_graph, pagerank
from .embed import FeatureHashProvider, PrecomputedProvider, make_provider
from .cluster import ClusterAssignment, SimilarityGraph, three_step_cluster
from .score import OriginalityRecord, normalize_pagerank, p_original, relevance
from .pipeline import OriginalityPipeline, PipelineConfig, SnapshotResult

__all__ = [
    'Article',
    'CorpusSnapshot',
    'load_corpus',
    'CitationGraph',
    'PageRankScores',
    'build_graph',
    'pagerank',
    'FeatureHashProvider',
    'PrecomputedProvider',
    'make_provider',
    'ClusterAssignment',
    'SimilarityGraph',
    'three_step_cluster',
    'OriginalityRecord',
    'normalize_pagerank',
    'p_original',
    'relevance',
    'OriginalityPipeline',
    'PipelineConfig',
    'SnapshotResult'
]
