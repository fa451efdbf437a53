# Memforge triple extraction
#
# An extractor turns one deduplicated Document into candidate EvidenceTriples.  The embedding of
# every triple is always recomputed here from the rendered triple text, whatever the extractor.

from __future__ import annotations
from typing import List, Optional, Protocol
from concurrent.futures import ThreadPoolExecutor
import logging
import re

from corpus import default_workers, normalize_text
from errors import ConfigError
from models import *

logger = logging.getLogger(__name__)


_SENTENCE_END = re.compile(r"(?<=[.!?])\s+|\n+")

# (phrase, relation, confidence) tried in this order against each normalized sentence
MOCK_PATTERNS = (
    ("shows",               "EXHIBITS_FEATURE", 0.9),
    ("is associated with",  "ASSOCIATED_WITH",  0.8),
    ("indicates",           "INDICATES",        0.85),
)


class ExtractorProvider(Protocol):
    def extract(self, doc: Document) -> ExtractionOutcome:
        ...


def make_triple(subject, relation, obj, confidence, embedder, source_digest) -> EvidenceTriple:
    return EvidenceTriple(subject=subject,
                          relation=relation,
                          object=obj,
                          confidence=confidence,
                          embedding=tuple(embedder.embed(f"{subject} {relation} {obj}").tolist()),
                          source_digest=source_digest)


def split_sentences(raw: str) -> List[str]:
    return [s for s in _SENTENCE_END.split(raw) if s.strip()]


def extract_mock(doc: Document, schema: RelationSchema, embedder) -> List[EvidenceTriple]:
    """
    Deterministic pattern extractor.  Sentences are split on the raw text and normalized one by one;
    the first pattern found as whole words yields (text before, relation, text after).
    """
    triples = []
    for sentence in split_sentences(doc.raw_text):
        normalized = normalize_text(sentence)
        for phrase, relation, confidence in MOCK_PATTERNS:
            if relation not in schema:
                continue
            head, sep, tail = normalized.partition(f" {phrase} ")
            if not sep:
                continue
            triples.append(make_triple(head, relation, tail, confidence, embedder, doc.digest))
            break
    return triples


class MockExtractor:

    def __init__(self, schema: RelationSchema, embedder):
        self.schema = schema
        self.embedder = embedder

    def extract(self, doc: Document) -> ExtractionOutcome:
        return ExtractionOutcome(source_digest=doc.digest, triples=extract_mock(doc, self.schema, self.embedder))


def filter_by_confidence(triples: List[EvidenceTriple], tau: float) -> List[EvidenceTriple]:
    """
    Keep triples with confidence >= tau, in order.
    """
    if not 0.0 < tau < 1.0:
        raise ConfigError(f'tau must lie in (0, 1), got {tau}')
    return [t for t in triples if t.confidence >= tau]


def extract_documents(docs: List[Document],
                      extractor: ExtractorProvider,
                      workers: Optional[int] = None) -> List[ExtractionOutcome]:
    """
    Run the extractor over documents concurrently.  Outcomes come back in ascending digest order
    so downstream results never depend on scheduling.
    """
    if not docs:
        return []
    with ThreadPoolExecutor(max_workers=workers or default_workers()) as pool:
        outcomes = list(pool.map(extractor.extract, docs))
    outcomes.sort(key=lambda o: o.source_digest)
    failed = sum(1 for o in outcomes if o.status == ExtractionStatus.failed)
    logger.info("Extracted %d triples from %d documents (%d items dropped, %d documents failed)",
                sum(len(o.triples) for o in outcomes), len(docs), sum(o.dropped for o in outcomes), failed)
    return outcomes
