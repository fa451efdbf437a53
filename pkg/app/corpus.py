# Memforge corpus ingestion
#
# Literature abstracts enter here: they are normalized, hashed, and deduplicated against the
# monotonic hash memory before anything downstream sees them.

from __future__ import annotations
from typing import Iterable, List, Optional, Collection, Tuple
from concurrent.futures import ThreadPoolExecutor
import hashlib
import json
import logging
import unicodedata

import psutil
from pydantic import ValidationError

from errors import DataError, SnapshotNotFoundError
from models import *

logger = logging.getLogger(__name__)


def _normalize_once(raw: str) -> str:
    text = unicodedata.normalize("NFKC", raw).lower()
    text = "".join(ch if ch.isalnum() else " " for ch in text)
    return " ".join(text.split())


def normalize_text(raw: str) -> str:
    """
    NFKC, lowercase, every non-alphanumeric character to a space, collapse whitespace, trim.
    The result is a fixed point: normalize_text(normalize_text(x)) == normalize_text(x).
    """
    text = _normalize_once(raw)
    # a few code points (e.g. U+0130) only settle on a second pass
    for _ in range(3):
        again = _normalize_once(text)
        if again == text:
            break
        text = again
    return text


def hash_document(doc_text: str) -> str:
    """
    SHA-256 over the UTF-8 bytes of already-normalized text, as a 64 character hex string.
    """
    return hashlib.sha256(doc_text.encode("utf-8")).hexdigest()


def make_document(source_id: str, raw_text: str) -> Document:
    normalized = normalize_text(raw_text)
    return Document(source_id=source_id,
                    raw_text=raw_text,
                    normalized_text=normalized,
                    digest=hash_document(normalized))


def default_workers() -> int:
    return max(1, psutil.cpu_count() or 1)


def prepare_documents(records: Iterable[CorpusRecord], workers: Optional[int] = None) -> List[Document]:
    """
    Normalize and hash records concurrently.  The returned list follows input order.
    """
    records = list(records)
    if not records:
        return []
    with ThreadPoolExecutor(max_workers=workers or default_workers()) as pool:
        return list(pool.map(lambda r: make_document(r.id, r.raw_text()), records))


def dedup_batch(docs: List[Document], memory: HashMemory) -> Tuple[List[Document], HashMemory]:
    """
    Retain the documents whose digest is not in memory, first occurrence winning within the batch.
    The new memory holds every digest of the batch and is one generation later.
    """
    seen = set(memory.seen)
    retained = []
    for doc in docs:
        if doc.digest in seen:
            continue
        seen.add(doc.digest)
        retained.append(doc)
    return retained, HashMemory(seen=frozenset(seen), generation=memory.generation + 1)


def read_corpus(path) -> List[CorpusRecord]:
    """
    Read a JSON Lines corpus: one object per line with id, optional title, abstract.
    Blank lines are skipped.
    """
    records = []
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise SnapshotNotFoundError(path)
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(CorpusRecord.model_validate_json(line))
            except ValidationError as e:
                raise DataError(f'{path}:{lineno}: invalid corpus record: {e.errors()[0]["msg"]}')
    logger.info("Read %d corpus records from %s", len(records), path)
    return records


def expand_queries(graph,
                   frontier_entities: Collection[str],
                   depth: int,
                   max_depth: int,
                   issued: Collection[str] = ()) -> List[SearchQuery]:
    """
    One query per frontier entity whose canonical name was not issued before, at depth+1,
    sorted by name.  Nothing is expanded once depth reaches max_depth.
    """
    if depth >= max_depth:
        return []
    names = set()
    for entity_id in frontier_entities:
        entity = graph.entities.get(entity_id)
        if entity is None:
            continue
        if entity.canonical_id in issued:
            continue
        names.add(entity.canonical_id)
    return [SearchQuery(text=name, depth=depth + 1) for name in sorted(names)]
