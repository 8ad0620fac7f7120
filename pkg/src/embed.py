"""Title embeddings, mini-cluster dedup and similarity primitives."""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence

import numpy as np

from .config import EMBEDDING_DIMENSION
from .corpus import CorpusSnapshot, normalize_title

logger = logging.getLogger(__name__)

UNIT_NORM_TOLERANCE = 1e-6


class MissingEmbeddingError(ValueError):
    def __init__(self, missing: Sequence[str]):
        self.missing = sorted(set(missing))
        preview = ", ".join(repr(t) for t in self.missing[:10])
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"No precomputed vector for {len(self.missing)} titles: {preview}{more}")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass
class MiniCluster:
    """Articles whose titles normalize to the same string."""
    normalized_title: str
    article_ids: List[str]
    representative_id: str


class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, normalized_title: str) -> np.ndarray:
        ...


def reserved_empty_vector(dimension: int) -> np.ndarray:
    vector = np.zeros(dimension, dtype=np.float64)
    vector[0] = 1.0
    return vector


class FeatureHashProvider:
    """
    Signed feature hashing of whitespace unigrams and adjacent bigrams.

    Each feature is hashed with BLAKE2b; the low bits pick the bucket and
    the top bit picks the sign. Titles with no surviving mass map to the
    reserved empty vector.
    """
    name = "hashing"

    def __init__(self, dimension: int = EMBEDDING_DIMENSION):
        if dimension < 1:
            raise ValueError(f"Embedding dimension must be positive, got {dimension}")
        self.dimension = dimension

    @staticmethod
    def features(normalized_title: str) -> List[str]:
        tokens = normalized_title.split()
        return tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]

    def embed(self, normalized_title: str) -> np.ndarray:
        vector = np.zeros(self.dimension, dtype=np.float64)
        for feature in self.features(normalized_title):
            digest = int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "big")
            sign = -1.0 if digest >> 63 else 1.0
            vector[digest % self.dimension] += sign

        norm = np.linalg.norm(vector)
        if norm == 0.0:
            return reserved_empty_vector(self.dimension)
        return vector / norm


class PrecomputedProvider:
    """Vectors produced elsewhere, keyed by normalized title."""
    name = "precomputed"

    def __init__(self, vectors: Dict[str, np.ndarray], dimension: int):
        self.dimension = dimension
        self.vectors = vectors

    @classmethod
    def from_file(cls, path: Path, dimension: Optional[int] = None) -> "PrecomputedProvider":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Precomputed vector file not found: {path}")

        vectors: Dict[str, np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    title = record["title"]
                    vector = np.asarray(record["vector"], dtype=np.float64)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise ValueError(f"{path}:{lineno}: malformed vector record: {e}") from e

                if dimension is None:
                    dimension = int(vector.shape[0])
                if vector.ndim != 1 or vector.shape[0] != dimension:
                    raise ValueError(f"{path}:{lineno}: expected a {dimension}-dimensional vector")
                norm = np.linalg.norm(vector)
                if norm == 0.0:
                    raise ValueError(f"{path}:{lineno}: zero vector for title {title!r}")
                vectors[title] = vector / norm

        logger.info(f"Loaded {len(vectors)} precomputed title vectors (D={dimension}) from {path}")
        return cls(vectors, dimension or EMBEDDING_DIMENSION)

    def embed(self, normalized_title: str) -> np.ndarray:
        if normalized_title not in self.vectors:
            if not normalized_title:
                return reserved_empty_vector(self.dimension)
            raise MissingEmbeddingError([normalized_title])
        return self.vectors[normalized_title]

    def missing(self, titles: Iterable[str]) -> List[str]:
        return [t for t in titles if t and t not in self.vectors]


def make_provider(
    name: str = "hashing",
    dimension: int = EMBEDDING_DIMENSION,
    vectors_path: Optional[Path] = None,
) -> EmbeddingProvider:
    if name == "hashing":
        return FeatureHashProvider(dimension)
    if name == "precomputed":
        if not vectors_path:
            raise ValueError("The precomputed provider needs a vector file (precomputed_vectors)")
        return PrecomputedProvider.from_file(vectors_path, dimension)
    raise ValueError(f"Unknown embedding provider: {name!r}. Use 'hashing' or 'precomputed'")


def hash_dedup_titles(corpus: CorpusSnapshot) -> List[MiniCluster]:
    """Group articles by normalized title; the smallest article id represents each group."""
    groups: Dict[str, List[str]] = {}
    for article in corpus.articles:
        groups.setdefault(normalize_title(article.title), []).append(article.id)

    clusters = []
    for title, ids in groups.items():
        ids = sorted(ids)
        clusters.append(MiniCluster(normalized_title=title, article_ids=ids, representative_id=ids[0]))
    clusters.sort(key=lambda c: c.representative_id)

    logger.info(f"Title dedup: {len(corpus.articles)} articles -> {len(clusters)} mini-clusters")
    return clusters


def embed_title(
    normalized_title: str,
    provider: EmbeddingProvider,
    dimension: Optional[int] = None,
) -> EmbeddingVector:
    if dimension is not None and dimension != provider.dimension:
        raise ValueError(f"Provider dimension {provider.dimension} does not match requested {dimension}")
    return EmbeddingVector(np.asarray(provider.embed(normalized_title), dtype=np.float64))


def embed_titles(titles: Sequence[str], provider: EmbeddingProvider) -> np.ndarray:
    """Embed many titles into an (n, D) matrix, reporting every missing key at once."""
    if isinstance(provider, PrecomputedProvider):
        missing = provider.missing(titles)
        if missing:
            raise MissingEmbeddingError(missing)
    matrix = np.empty((len(titles), provider.dimension), dtype=np.float64)
    for i, title in enumerate(titles):
        matrix[i] = provider.embed(title)
    return matrix


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dimension != b.dimension:
        raise ValueError(f"Dimension mismatch: {a.dimension} vs {b.dimension}")
    return float(np.clip(np.dot(a.values, b.values), -1.0, 1.0))


def cosine_embedding_loss(x1: EmbeddingVector, x2: EmbeddingVector, y: int, margin: float = 0.0) -> float:
    """1 - cos for same-event pairs (y=+1); max(0, cos - margin) for different events (y=-1)."""
    if y not in (1, -1):
        raise ValueError(f"Label y must be +1 or -1, got {y!r}")
    cos = cosine_similarity(x1, x2)
    if y == 1:
        return max(0.0, 1.0 - cos)
    return max(0.0, cos - margin)
