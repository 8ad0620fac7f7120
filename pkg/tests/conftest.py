import json
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import pytest

from src.corpus import Article, CorpusSnapshot, format_timestamp


SNAPSHOT = datetime(2024, 1, 8, tzinfo=timezone.utc)


def make_article(
    article_id: str,
    publisher: str,
    links: Optional[List[str]] = None,
    title: str = "",
    hours_ago: float = 1.0,
) -> Article:
    url = f"https://{publisher}.example/{article_id}"
    return Article(
        id=article_id,
        url=url,
        canonical_url=url,
        title=title or f"title of {article_id}",
        publisher=publisher,
        published_at=SNAPSHOT - timedelta(hours=hours_ago),
        links=list(links or []),
    )


def url_of(article_id: str, publisher: str) -> str:
    return f"https://{publisher}.example/{article_id}"


def snapshot_of(articles: Iterable[Article]) -> CorpusSnapshot:
    return CorpusSnapshot(articles=list(articles), snapshot_time=SNAPSHOT)


def record(
    article_id: str,
    publisher: str = "pub",
    title: str = "A title",
    published_at: Optional[datetime] = None,
    **extra,
) -> Dict:
    data = {
        "id": article_id,
        "url": url_of(article_id, publisher),
        "title": title,
        "publisher": publisher,
        "published_at": format_timestamp(published_at or SNAPSHOT - timedelta(hours=1)),
    }
    data.update(extra)
    return data


def write_jsonl(path: Path, records: Iterable) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        for item in records:
            f.write((item if isinstance(item, str) else json.dumps(item)) + "\n")
    return path


@pytest.fixture
def snapshot_time() -> datetime:
    return SNAPSHOT
