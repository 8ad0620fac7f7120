"""Article ingest: JSONL loading, link extraction, URL canonicalization and title normalization."""
import json
import logging
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from fnmatch import fnmatchcase
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence
from urllib.parse import urljoin, urlsplit, urlunsplit

from bs4 import BeautifulSoup

from .config import TRACKING_PARAMS, WINDOW_DAYS

logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
WEB_SCHEMES = ("http", "https")


class InvalidURLError(ValueError):
    def __init__(self, url: str, reason: str = "not an absolute http(s) URL"):
        super().__init__(f"Invalid URL {url!r}: {reason}")
        self.url = url


@dataclass
class Article:
    id: str
    url: str
    canonical_url: str
    title: str
    publisher: str
    published_at: datetime
    links: List[str] = field(default_factory=list)
    raw_html: Optional[str] = None

    def to_dict(self) -> Dict:
        data = {
            "id": self.id,
            "url": self.url,
            "canonical_url": self.canonical_url,
            "title": self.title,
            "publisher": self.publisher,
            "published_at": format_timestamp(self.published_at),
            "links": list(self.links),
        }
        if self.raw_html is not None:
            data["html"] = self.raw_html
        return data


@dataclass
class Reject:
    line: int
    reason: str

    def to_dict(self) -> Dict:
        return {"line": self.line, "reason": self.reason}


@dataclass
class CorpusSnapshot:
    articles: List[Article]
    snapshot_time: datetime
    window_days: int = WINDOW_DAYS
    rejects: List[Reject] = field(default_factory=list)
    excluded: int = 0

    @property
    def window_start(self) -> datetime:
        return self.snapshot_time - timedelta(days=self.window_days)

    def in_window(self, published_at: datetime) -> bool:
        return self.window_start < published_at <= self.snapshot_time

    def by_id(self) -> Dict[str, Article]:
        return {article.id: article for article in self.articles}

    def __len__(self) -> int:
        return len(self.articles)


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime truncated to seconds."""
    if not isinstance(value, str) or not value:
        raise ValueError(f"Timestamp must be a non-empty string, got {value!r}")
    parsed = datetime.fromisoformat(value.strip().replace("Z", "+00:00"))
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(value: datetime) -> str:
    return value.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def normalize_title(title: str) -> str:
    """Lowercase, replace every P* and S* character with a space, collapse whitespace."""
    lowered = title.lower()
    stripped = "".join(
        " " if unicodedata.category(ch)[0] in ("P", "S") else ch
        for ch in lowered
    )
    return " ".join(stripped.split())


def _is_tracking_param(key: str, tracking_params: Sequence[str]) -> bool:
    return any(fnmatchcase(key, pattern) for pattern in tracking_params)


def canonicalize_url(
    url: str,
    canonical_map: Optional[Mapping[str, str]] = None,
    tracking_params: Sequence[str] = TRACKING_PARAMS,
) -> str:
    """
    Resolve a URL to its canonical form.

    A canonical map entry wins outright. Otherwise the scheme and host are
    lowercased, the fragment and tracking query parameters are dropped and
    a bare "/" path is removed. Tracking parameters may be glob patterns
    such as "utm_*".
    """
    if canonical_map and url in canonical_map:
        return canonical_map[url]

    if not isinstance(url, str) or not url.strip():
        raise InvalidURLError(str(url), "empty URL")
    try:
        parts = urlsplit(url.strip())
        # Force port parsing so malformed ports surface here
        parts.port
    except ValueError as e:
        raise InvalidURLError(url, str(e)) from e

    scheme = parts.scheme.lower()
    if scheme not in WEB_SCHEMES or not parts.netloc:
        raise InvalidURLError(url)

    userinfo, _, hostport = parts.netloc.rpartition("@")
    netloc = f"{userinfo}@{hostport.lower()}" if userinfo else hostport.lower()

    kept = [
        segment for segment in parts.query.split("&")
        if segment and not _is_tracking_param(segment.split("=", 1)[0], tracking_params)
    ]
    path = "" if parts.path == "/" else parts.path

    return urlunsplit((scheme, netloc, path, "&".join(kept), ""))


def extract_links(html: str, base_url: str) -> List[str]:
    """Return absolute http(s) targets of every <a href>, first-seen order, no duplicates."""
    if not html:
        return []
    try:
        soup = BeautifulSoup(html, "html.parser")
    except Exception as e:
        logger.debug(f"Unparseable HTML for {base_url}: {e}")
        return []

    seen = set()
    links: List[str] = []
    for anchor in soup.find_all("a", href=True):
        href = anchor.get("href")
        if not isinstance(href, str) or not href.strip():
            continue
        try:
            absolute = urljoin(base_url, href.strip())
            scheme = urlsplit(absolute).scheme.lower()
        except ValueError:
            continue
        if scheme not in WEB_SCHEMES:
            continue
        if absolute not in seen:
            seen.add(absolute)
            links.append(absolute)
    return links


def read_canonical_map(path: Optional[Path]) -> Dict[str, str]:
    """Read a `url<TAB>canonical_url` file; blank lines and `#` comments are skipped."""
    if not path:
        return {}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Canonical map not found: {path}")

    mapping: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'url<TAB>canonical_url'")
            mapping[fields[0].strip()] = fields[1].strip()
    logger.info(f"Loaded {len(mapping)} canonical URL mappings from {path}")
    return mapping


def _require_str(record: Dict, key: str, optional: bool = False) -> Optional[str]:
    value = record.get(key)
    if value is None and optional:
        return None
    if not isinstance(value, str) or (not optional and not value.strip()):
        raise ValueError(f"field '{key}' must be a non-empty string")
    return value


def _parse_record(
    record: Dict,
    canonical_map: Mapping[str, str],
    tracking_params: Sequence[str],
) -> Article:
    if not isinstance(record, dict):
        raise ValueError("record is not a JSON object")

    article_id = _require_str(record, "id")
    url = _require_str(record, "url")
    title = _require_str(record, "title", optional=True) or ""
    publisher = _require_str(record, "publisher")
    try:
        published_at = parse_timestamp(record.get("published_at"))
    except (TypeError, ValueError) as e:
        raise ValueError(f"field 'published_at' is not RFC 3339: {e}") from e

    declared = _require_str(record, "canonical_url", optional=True)
    canonical = canonicalize_url(declared or url, canonical_map, tracking_params)

    html = record.get("html")
    if html is not None and not isinstance(html, str):
        raise ValueError("field 'html' must be a string")

    raw_links = record.get("links")
    if raw_links is None:
        raw_links = extract_links(html, url) if html else []
    elif not isinstance(raw_links, list) or not all(isinstance(l, str) for l in raw_links):
        raise ValueError("field 'links' must be a list of strings")

    links: List[str] = []
    seen = set()
    for link in raw_links:
        try:
            resolved = canonicalize_url(link, canonical_map, tracking_params)
        except InvalidURLError as e:
            logger.debug(f"Dropping link in {article_id}: {e}")
            continue
        if resolved not in seen:
            seen.add(resolved)
            links.append(resolved)

    return Article(
        id=article_id,
        url=url,
        canonical_url=canonical,
        title=title,
        publisher=publisher,
        published_at=published_at,
        links=links,
        raw_html=html,
    )


def load_corpus(
    path: Path,
    snapshot_time: datetime,
    window_days: int = WINDOW_DAYS,
    canonical_map: Optional[Mapping[str, str]] = None,
    tracking_params: Sequence[str] = TRACKING_PARAMS,
) -> CorpusSnapshot:
    """
    Load an articles JSONL file into a windowed snapshot.

    Malformed records are collected as rejects instead of failing the load;
    only an unreadable file is fatal.
    """
    if window_days <= 0:
        raise ValueError(f"window_days must be positive, got {window_days}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Corpus file not found: {path}")

    snapshot = CorpusSnapshot(articles=[], snapshot_time=snapshot_time, window_days=window_days)
    canonical_map = canonical_map or {}
    seen_ids = set()
    seen_canonical = set()

    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, 1):
            try:
                line = raw.decode("utf-8").strip()
            except UnicodeDecodeError:
                snapshot.rejects.append(Reject(lineno, "line is not valid UTF-8"))
                continue
            if not line:
                continue

            try:
                article = _parse_record(json.loads(line), canonical_map, tracking_params)
            except json.JSONDecodeError as e:
                snapshot.rejects.append(Reject(lineno, f"malformed JSON: {e.msg}"))
                continue
            except ValueError as e:
                snapshot.rejects.append(Reject(lineno, str(e)))
                continue

            if not snapshot.in_window(article.published_at):
                snapshot.excluded += 1
                continue
            if article.id in seen_ids:
                snapshot.rejects.append(Reject(lineno, f"duplicate id {article.id!r}"))
                continue
            if article.canonical_url in seen_canonical:
                snapshot.rejects.append(Reject(lineno, f"duplicate canonical_url {article.canonical_url!r}"))
                continue

            seen_ids.add(article.id)
            seen_canonical.add(article.canonical_url)
            snapshot.articles.append(article)

    if snapshot.rejects:
        logger.warning(f"Rejected {len(snapshot.rejects)} malformed records from {path}")
    logger.info(
        f"Loaded {len(snapshot.articles)} articles from {path} "
        f"(window {format_timestamp(snapshot.window_start)} .. {format_timestamp(snapshot_time)}, "
        f"{snapshot.excluded} outside window)"
    )
    return snapshot


def write_corpus(path: Path, articles: Iterable[Article]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for article in articles:
            f.write(json.dumps(article.to_dict(), ensure_ascii=False) + "\n")
    return path


def write_rejects(path: Path, rejects: Iterable[Reject]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for reject in rejects:
            f.write(json.dumps(reject.to_dict()) + "\n")
    return path
