"""
Evaluation harness: pairwise AUC for title embeddings, pair-based
precision/recall for clusterings, rater agreement for originality, the
threshold lift table and a synthetic corpus generator with planted ground
truth.
"""
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .citation import CitationGraph
from .cluster import ClusterAssignment
from .corpus import Article, format_timestamp, normalize_title, write_corpus
from .embed import EmbeddingProvider, EmbeddingVector, cosine_similarity, embed_title
from .score import OriginalityRecord

logger = logging.getLogger(__name__)

SIMILARITY_LABELS = (0.0, 1.0, 2.0, 3.0)
ORIGINALITY_RATINGS = (1.0, 2.0, 3.0)
AUC_THRESHOLDS = (0.5, 1.5, 2.5)
DEFAULT_LIFT_THRESHOLDS = (0.4, 0.5, 0.6, 0.7, 0.8)
FULLY_ORIGINAL = 3.0

SYNTHETIC_SNAPSHOT = datetime(2024, 1, 8, tzinfo=timezone.utc)
SYLLABLES = (
    "ka", "lo", "mi", "ne", "ru", "sa", "te", "vo", "zu", "pa", "di", "go",
    "hu", "je", "bi", "ro", "fa", "ly", "qu", "xe", "wa", "yo", "ce", "ni",
)


class SingleClassError(ValueError):
    pass


class UnknownIdError(ValueError):
    def __init__(self, article_id: str):
        super().__init__(f"Unknown article id in labeled pairs: {article_id!r}")
        self.article_id = article_id


@dataclass(frozen=True)
class LabeledPair:
    id_a: str
    id_b: str
    label: float

    def __post_init__(self):
        if self.label not in SIMILARITY_LABELS:
            raise ValueError(f"Similarity label must be one of {SIMILARITY_LABELS}, got {self.label}")


@dataclass(frozen=True)
class OriginalityLabel:
    id: str
    rating: float

    def __post_init__(self):
        if self.rating not in ORIGINALITY_RATINGS:
            raise ValueError(f"Originality rating must be one of {ORIGINALITY_RATINGS}, got {self.rating}")


@dataclass
class PrecisionRecall:
    precision: Optional[float]
    recall: Optional[float]
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision_defined(self) -> bool:
        return self.precision is not None

    @property
    def recall_defined(self) -> bool:
        return self.recall is not None

    def to_dict(self) -> Dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
        }


@dataclass
class LiftRow:
    threshold: float
    share: float
    promoted: int


@dataclass
class SyntheticCorpus:
    articles: List[Article]
    event_of: Dict[str, int]
    originals: Dict[int, str]
    snapshot_time: datetime

    def write(self, path: Path) -> Path:
        return write_corpus(path, self.articles)

    def write_truth(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        original_ids = set(self.originals.values())
        with open(path, "w", encoding="utf-8") as f:
            for aid, event in sorted(self.event_of.items()):
                f.write(json.dumps({"id": aid, "event": event, "original": aid in original_ids}) + "\n")
        return path


def pairwise_auc(pairs: Sequence[Tuple[LabeledPair, float]], binarize_at: float) -> float:
    """ROC AUC of model scores against labels binarized at `binarize_at`, midranks for ties."""
    if binarize_at not in AUC_THRESHOLDS:
        raise ValueError(f"binarize_at must be one of {AUC_THRESHOLDS}, got {binarize_at}")

    positives = np.array([pair.label > binarize_at for pair, _ in pairs], dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(pairs) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError(
            f"AUC@{binarize_at} needs both classes, got {n_pos} positive and {n_neg} negative pairs"
        )

    ranks = rankdata([score for _, score in pairs], method="average")
    rank_sum = float(ranks[positives].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def clustering_precision_recall(
    assignment: ClusterAssignment,
    pairs: Iterable[LabeledPair],
    positive_at: float = 1.5,
) -> PrecisionRecall:
    """
    Pair-based precision and recall: a pair is predicted positive when both
    articles share a cluster and labeled positive when its label exceeds
    `positive_at`. Zero denominators give None instead of a value.
    """
    tp = fp = fn = tn = 0
    clusters = assignment.assignment
    for pair in pairs:
        for aid in (pair.id_a, pair.id_b):
            if aid not in clusters:
                raise UnknownIdError(aid)
        predicted = clusters[pair.id_a] == clusters[pair.id_b]
        actual = pair.label > positive_at
        if predicted and actual:
            tp += 1
        elif predicted:
            fp += 1
        elif actual:
            fn += 1
        else:
            tn += 1

    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None:
        logger.warning("Precision undefined: no pair predicted positive")
    if recall is None:
        logger.warning("Recall undefined: no labeled positive pairs")
    return PrecisionRecall(precision=precision, recall=recall, tp=tp, fp=fp, fn=fn, tn=tn)


def lift_table(
    records: Sequence[OriginalityRecord],
    view_model: Mapping[str, float],
    thresholds: Sequence[float] = DEFAULT_LIFT_THRESHOLDS,
) -> List[LiftRow]:
    """Share of all views landing on articles with originality above each threshold."""
    if list(thresholds) != sorted(thresholds):
        raise ValueError(f"thresholds must be ascending, got {list(thresholds)}")

    views = [(r.originality, float(view_model.get(r.id, 0.0))) for r in records]
    total = sum(v for _, v in views)
    if total <= 0:
        logger.warning("View model assigns no views; all lift shares are 0")

    rows = []
    for theta in thresholds:
        promoted = [(s, v) for s, v in views if s is not None and s > theta]
        share = sum(v for _, v in promoted) / total if total > 0 else 0.0
        rows.append(LiftRow(threshold=theta, share=share, promoted=len(promoted)))
    return rows


def in_degree_views(graph: CitationGraph) -> Dict[str, float]:
    """Synthetic view model: views proportional to citation in-degree."""
    return {vid: float(count) for vid, count in graph.in_degrees().items()}


def originality_accuracy(
    records: Iterable[OriginalityRecord],
    labels: Iterable[OriginalityLabel],
    theta: float,
) -> Dict:
    """
    Rater agreement: of the articles raters marked fully original, the
    share the signal identifies as original (originality above theta).
    """
    by_id = {r.id: r for r in records}
    rated = [label for label in labels if label.rating == FULLY_ORIGINAL]
    unknown = [label.id for label in rated if label.id not in by_id]
    if unknown:
        raise UnknownIdError(unknown[0])

    matched = sum(
        1 for label in rated
        if by_id[label.id].originality is not None and by_id[label.id].originality > theta
    )
    return {
        "evaluated": len(rated),
        "matched": matched,
        "accuracy": matched / len(rated) if rated else None,
    }


def evaluate_embeddings(
    pairs: Sequence[LabeledPair],
    titles: Mapping[str, str],
    provider: EmbeddingProvider,
) -> Dict[str, Optional[float]]:
    """AUC at every binarization threshold, scoring pairs by title cosine similarity."""
    cache: Dict[str, EmbeddingVector] = {}

    def vector(aid: str) -> EmbeddingVector:
        if aid not in titles:
            raise UnknownIdError(aid)
        if aid not in cache:
            cache[aid] = embed_title(normalize_title(titles[aid]), provider)
        return cache[aid]

    scored = [(pair, cosine_similarity(vector(pair.id_a), vector(pair.id_b))) for pair in pairs]
    report: Dict[str, Optional[float]] = {}
    for threshold in AUC_THRESHOLDS:
        try:
            report[f"auc@{threshold}"] = pairwise_auc(scored, threshold)
        except SingleClassError as e:
            logger.warning(str(e))
            report[f"auc@{threshold}"] = None
    return report


def labeled_pairs_from_truth(
    event_of: Mapping[str, int],
    negatives: int,
    seed: int = 0,
) -> List[LabeledPair]:
    """Every same-event pair labeled 3.0 plus `negatives` sampled cross-event pairs labeled 0.0."""
    ids = sorted(event_of)
    by_event: Dict[int, List[str]] = {}
    for aid in ids:
        by_event.setdefault(event_of[aid], []).append(aid)

    pairs = [
        LabeledPair(a, b, 3.0)
        for members in by_event.values()
        for a, b in combinations(members, 2)
    ]
    if len(by_event) < 2:
        return pairs

    rng = np.random.default_rng(seed)
    seen = set()
    attempts = 0
    while len(seen) < negatives and attempts < negatives * 20:
        attempts += 1
        i, j = rng.integers(0, len(ids), size=2)
        a, b = sorted((ids[i], ids[j]))
        if event_of[a] != event_of[b] and (a, b) not in seen:
            seen.add((a, b))
            pairs.append(LabeledPair(a, b, 0.0))
    return pairs


def _make_words(rng: np.random.Generator, count: int, used: set) -> List[str]:
    words = []
    while len(words) < count:
        word = "".join(rng.choice(SYLLABLES, size=int(rng.integers(3, 6))))
        if word not in used:
            used.add(word)
            words.append(word)
    return words


def _perturb(template: List[str], substitutes: List[str], rng: np.random.Generator) -> str:
    words = list(template)
    for position in rng.choice(len(words), size=int(rng.integers(1, 3)), replace=False):
        words[int(position)] = substitutes[int(rng.integers(len(substitutes)))]
    return " ".join(words).capitalize()


def generate_synthetic_corpus(
    events: int,
    followers: int,
    noise_edges: int = 0,
    seed: int = 0,
    snapshot_time: datetime = SYNTHETIC_SNAPSHOT,
    window_days: int = 7,
    chain_probability: float = 0.3,
    title_words: int = 8,
) -> SyntheticCorpus:
    """
    Plant news events with known originals.

    Each event has one original article and `followers` later articles
    from other publishers that cite it; some followers also cite an
    earlier follower. Follower titles are the event template with one or
    two words swapped for event-specific substitutes, so events stay
    separable by title. `noise_edges` random citations cross events.
    """
    if events < 1 or followers < 0 or noise_edges < 0:
        raise ValueError("events must be positive; followers and noise_edges non-negative")

    rng = np.random.default_rng(seed)
    used_words: set = set()
    publishers = [f"pub{i:03d}" for i in range(max(50, followers + 1))]
    window_hours = window_days * 24

    articles: List[Article] = []
    event_of: Dict[str, int] = {}
    originals: Dict[int, str] = {}

    for event in range(events):
        template = _make_words(rng, title_words, used_words)
        substitutes = _make_words(rng, 4, used_words)
        event_publishers = rng.choice(len(publishers), size=followers + 1, replace=False)
        start = snapshot_time - timedelta(hours=float(rng.uniform(12, window_hours * 0.9)))

        event_articles: List[Article] = []
        for j in range(followers + 1):
            publisher = publishers[int(event_publishers[j])]
            aid = f"e{event:04d}-{j:03d}"
            url = f"https://{publisher}.example/{event}/{j}"
            if j == 0:
                title = " ".join(template).capitalize()
                published = start
                links: List[str] = []
            else:
                title = _perturb(template, substitutes, rng)
                published = start + timedelta(minutes=float(rng.uniform(1, 600)))
                links = [event_articles[0].canonical_url]
                if j > 1 and rng.random() < chain_probability:
                    links.append(event_articles[int(rng.integers(1, j))].canonical_url)

            article = Article(
                id=aid,
                url=url,
                canonical_url=url,
                title=title,
                publisher=publisher,
                published_at=min(published, snapshot_time).replace(microsecond=0),
                links=links,
            )
            event_articles.append(article)
            event_of[aid] = event
        originals[event] = event_articles[0].id
        articles.extend(event_articles)

    for _ in range(noise_edges):
        citing, cited = (articles[int(i)] for i in rng.integers(0, len(articles), size=2))
        if citing.publisher != cited.publisher and cited.canonical_url not in citing.links:
            citing.links.append(cited.canonical_url)

    logger.info(
        f"Generated synthetic corpus: {events} events, {len(articles)} articles, "
        f"snapshot {format_timestamp(snapshot_time)}"
    )
    return SyntheticCorpus(articles=articles, event_of=event_of, originals=originals, snapshot_time=snapshot_time)


def original_wins(records: Iterable[OriginalityRecord], corpus: SyntheticCorpus) -> float:
    """Share of events whose planted original has the strictly largest originality."""
    by_event: Dict[int, List[OriginalityRecord]] = {}
    for record in records:
        by_event.setdefault(corpus.event_of[record.id], []).append(record)

    wins = 0
    for event, original in corpus.originals.items():
        members = by_event.get(event, [])
        score = {r.id: (r.originality if r.originality is not None else -1.0) for r in members}
        if original in score and all(score[original] > s for aid, s in score.items() if aid != original):
            wins += 1
    return wins / len(corpus.originals) if corpus.originals else 0.0


def read_labeled_pairs(path: Path) -> List[LabeledPair]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Labeled pairs file not found: {path}")
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'id_a<TAB>id_b<TAB>label'")
            pairs.append(LabeledPair(fields[0], fields[1], float(fields[2])))
    return pairs


def write_labeled_pairs(path: Path, pairs: Iterable[LabeledPair]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for pair in pairs:
            f.write(f"{pair.id_a}\t{pair.id_b}\t{pair.label}\n")
    return path


def read_originality_labels(path: Path) -> List[OriginalityLabel]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Originality labels file not found: {path}")
    labels = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'id<TAB>rating'")
            labels.append(OriginalityLabel(fields[0], float(fields[1])))
    return labels


def write_report(path: Path, report: Dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
