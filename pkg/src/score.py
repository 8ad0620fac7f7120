"""Cluster-normalized originality, P(original) and the relevance term."""
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import yaml

from .citation import PageRankScores
from .cluster import ClusterAssignment
from .config import NORM_P, THETA

logger = logging.getLogger(__name__)

# Weight name paired with P(click) * P(original)
CLICK_ORIGINAL = "click_original"


@dataclass
class OriginalityRecord:
    id: str
    cluster: int
    pagerank: float
    originality: Optional[float]
    p_original: float

    def to_dict(self) -> Dict:
        return {
            "id": self.id,
            "cluster": self.cluster,
            "pagerank": self.pagerank,
            "originality": self.originality,
            "p_original": self.p_original,
        }


@dataclass
class RelevanceInputs:
    probabilities: Dict[str, float]
    weights: Dict[str, float]

    def __post_init__(self):
        for name, value in self.probabilities.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"P({name}) must be in [0, 1], got {value}")


@dataclass
class ScoreWeights:
    alpha: Dict[str, float] = field(default_factory=dict)
    theta: float = THETA
    p: float = NORM_P

    @classmethod
    def load(cls, path: Path) -> "ScoreWeights":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Weights file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) if path.suffix in (".yaml", ".yml") else json.load(f)
        data = data or {}
        weights = cls(
            alpha={str(k): float(v) for k, v in (data.get("alpha") or {}).items()},
            theta=float(data.get("theta", THETA)),
            p=float(data.get("p", NORM_P)),
        )
        validate_theta(weights.theta)
        if weights.p <= 0:
            raise ValueError(f"p must be positive, got {weights.p}")
        return weights


def normalize_pagerank(
    scores: Union[PageRankScores, Mapping[str, float]],
    clusters: ClusterAssignment,
    p: float = NORM_P,
) -> Dict[str, float]:
    """
    s_v = (n_v^p / sum of n_u^p over v's cluster)^(1/p).

    Only articles with a positive PageRank take part; clustered articles
    outside the citation graph get no entry. Scored articles missing from
    the assignment are treated as singleton clusters.
    """
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    pagerank = scores.scores if isinstance(scores, PageRankScores) else scores

    groups: Dict[object, List[Tuple[str, float]]] = defaultdict(list)
    unclustered = 0
    for vid, n_v in pagerank.items():
        if n_v <= 0:
            continue
        if vid in clusters.assignment:
            groups[("cluster", clusters.assignment[vid])].append((vid, n_v))
        else:
            unclustered += 1
            groups[("singleton", vid)].append((vid, n_v))
    if unclustered:
        logger.warning(f"{unclustered} scored articles have no cluster; treating them as singletons")

    originality: Dict[str, float] = {}
    for members in groups.values():
        # Scale by the cluster maximum so n^p neither underflows nor overflows
        top = max(n_v for _, n_v in members)
        powered = [(vid, (n_v / top) ** p) for vid, n_v in members]
        total = sum(x for _, x in powered)
        for vid, x in powered:
            originality[vid] = (x / total) ** (1.0 / p)
    return dict(sorted(originality.items()))


def validate_theta(theta: float) -> None:
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must be in (0, 1), got {theta}")


def p_original(s: float, theta: float = THETA) -> float:
    """Linear rescale of s above the promotion threshold theta onto [0, 1]."""
    validate_theta(theta)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"originality must be in [0, 1], got {s}")
    return (max(s, theta) - theta) / (1.0 - theta)


def relevance(inputs: RelevanceInputs, p_orig: float) -> float:
    """Weighted engagement probabilities plus alpha_n * P(click) * P(original)."""
    if not 0.0 <= p_orig <= 1.0:
        raise ValueError(f"p_original must be in [0, 1], got {p_orig}")

    total = 0.0
    for name, alpha in inputs.weights.items():
        if name == CLICK_ORIGINAL:
            if "click" not in inputs.probabilities:
                if alpha != 0:
                    raise ValueError("P(click) is required when the click_original weight is non-zero")
                continue
            total += alpha * inputs.probabilities["click"] * p_orig
        elif name in inputs.probabilities:
            total += alpha * inputs.probabilities[name]
        elif alpha != 0:
            raise ValueError(f"No probability supplied for weight {name!r}")
    return total


def score_articles(
    scores: Union[PageRankScores, Mapping[str, float]],
    clusters: ClusterAssignment,
    p: float = NORM_P,
    theta: float = THETA,
) -> List[OriginalityRecord]:
    """One record per clustered article; uncited articles get P(original) = 0."""
    pagerank = scores.scores if isinstance(scores, PageRankScores) else scores
    validate_theta(theta)
    originality = normalize_pagerank(pagerank, clusters, p)

    records = []
    for vid, cid in sorted(clusters.assignment.items()):
        s = originality.get(vid)
        records.append(OriginalityRecord(
            id=vid,
            cluster=cid,
            pagerank=float(pagerank.get(vid, 0.0)),
            originality=s,
            p_original=p_original(min(s, 1.0), theta) if s is not None else 0.0,
        ))

    promoted = sum(1 for r in records if r.p_original > 0)
    logger.info(f"Scored {len(records)} articles; {promoted} above threshold {theta}")
    return records


def rank_by_relevance(
    items: Iterable[Tuple[str, RelevanceInputs]],
    records: Mapping[str, OriginalityRecord],
) -> List[Tuple[str, float]]:
    """Relevance per article, highest first; articles without a record get P(original) = 0."""
    ranked = []
    for vid, inputs in items:
        record = records.get(vid)
        ranked.append((vid, relevance(inputs, record.p_original if record else 0.0)))
    ranked.sort(key=lambda item: (-item[1], item[0]))
    return ranked


def write_records(path: Path, records: Iterable[OriginalityRecord]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_dict()) + "\n")
    return path


def read_records(path: Path) -> List[OriginalityRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scores file not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                data = json.loads(line)
                records.append(OriginalityRecord(
                    id=data["id"],
                    cluster=int(data["cluster"]),
                    pagerank=float(data["pagerank"]),
                    originality=data.get("originality"),
                    p_original=float(data["p_original"]),
                ))
    return records
