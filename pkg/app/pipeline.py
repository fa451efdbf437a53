# Memforge LTM build pipeline
#
# ingest -> dedup -> extract -> filter -> upsert, either over a local corpus or over a literature
# search that starts at a seed query and expands breadth-first through newly found entities.

from __future__ import annotations
from collections import Counter, deque
from typing import Iterable, List, Optional, Tuple
import logging

from config import load_lexicon, load_synonyms
from corpus import dedup_batch, expand_queries, normalize_text, prepare_documents, read_corpus
from embedding import make_embedder
from errors import ConfigError, EmptyLTMError, EntityRejectedError
from extraction import ExtractorProvider, MockExtractor, extract_documents, filter_by_confidence
from graphstore import KnowledgeGraph, load_snapshot
from ledger import Ledger
from llm import RemoteExtractor
from models import *
from pubmed import PubMedClient

logger = logging.getLogger(__name__)


def make_extractor(config: PipelineConfig, schema: Optional[RelationSchema] = None, embedder=None) -> ExtractorProvider:
    schema = schema or RelationSchema()
    embedder = embedder or make_embedder(config)
    if config.extractor == "mock":
        return MockExtractor(schema, embedder)
    if config.extractor == "remote":
        return RemoteExtractor(config.llm_endpoint,
                               schema,
                               embedder,
                               retries=config.llm_retries,
                               timeout=config.request_timeout)
    raise ConfigError(f'unknown extractor {config.extractor!r}')


class Builder:
    """
    Accumulates one LTM build: the graph, the hash memory and the report.
    """

    def __init__(self,
                 config: PipelineConfig,
                 graph: Optional[KnowledgeGraph] = None,
                 extractor: Optional[ExtractorProvider] = None,
                 ledger: Optional[Ledger] = None):
        self.config = config
        lexicon = load_lexicon(config.disease_lexicon)
        if graph is None:
            graph = KnowledgeGraph(config.fusion_params(), lexicon)
        else:
            graph.extend_lexicon(lexicon)
        self.graph = graph
        self.synonyms = load_synonyms(config.synonym_table)
        self.extractor = extractor or make_extractor(config)
        self.ledger = ledger
        self.memory = ledger.load_memory() if ledger else HashMemory()
        self.report = BuildReport()
        self._relations = Counter()
        self._confidences = Counter()

    def ingest(self, records: Iterable[CorpusRecord]) -> List[str]:
        """
        Run one batch of records through the pipeline.  Returns the canonical ids of entities
        that the batch added to the graph, sorted.
        """
        before = set(self.graph.entities)
        docs = prepare_documents(records, self.config.workers)
        retained, self.memory = dedup_batch(docs, self.memory)
        self.report.docs_seen += len(docs)
        self.report.deduped += len(docs) - len(retained)
        outcomes = extract_documents(retained, self.extractor, self.config.workers)
        for outcome in outcomes:
            if outcome.status == ExtractionStatus.failed:
                self.report.failed_documents += 1
                continue
            self.report.triples_extracted += len(outcome.triples)
            self.report.malformed += outcome.dropped
            kept = filter_by_confidence(outcome.triples, self.config.tau)
            self.report.dropped += len(outcome.triples) - len(kept)
            for triple in kept:
                try:
                    self.graph.upsert(triple, self.synonyms)
                except EntityRejectedError as e:
                    logger.warning("%s", e.message)
                    self.report.dropped += 1
                    continue
                self.report.retained += 1
                self._relations[triple.relation] += 1
                self._confidences[repr(triple.confidence)] += 1
        if self.ledger:
            self.ledger.commit_memory(self.memory)
            self.ledger.record_outcomes(retained, outcomes)
        return sorted(set(self.graph.entities) - before)

    def search(self, seed: str, client: PubMedClient):
        """
        Breadth-first literature expansion from the seed query, bounded by max_depth and by the
        global query budget.
        """
        issued = {normalize_text(seed)}
        if self.ledger:
            issued |= self.ledger.issued_queries()
        queue = deque([SearchQuery(text=seed, depth=0)])
        while queue and self.report.queries_issued < self.config.query_budget:
            query = queue.popleft()
            ids = client.search(query, self.config.retmax)
            self.report.queries_issued += 1
            if self.ledger:
                self.ledger.record_query(query, len(ids))
            records = client.fetch(ids) if ids else []
            new_entities = self.ingest(records)
            expansions = expand_queries(self.graph, new_entities, query.depth, self.config.max_depth, issued)
            issued.update(q.text for q in expansions)
            queue.extend(expansions)
        if queue:
            logger.info("Query budget of %d exhausted with %d queries pending", self.config.query_budget, len(queue))

    def finish(self) -> Tuple[KnowledgeGraph, BuildReport]:
        if not self.graph.edges:
            raise EmptyLTMError()
        self.report.edges = len(self.graph.edges)
        self.report.entities = len(self.graph.entities)
        self.report.retained_relations = dict(sorted(self._relations.items()))
        self.report.retained_confidences = dict(sorted(self._confidences.items()))
        logger.info("Built LTM with %d entities / %d edges from %d documents (%d duplicates)",
                    self.report.entities, self.report.edges, self.report.docs_seen, self.report.deduped)
        return self.graph, self.report


def build_ltm(config: PipelineConfig,
              corpus_path: Optional[str] = None,
              seed: Optional[str] = None,
              base: Optional[str] = None,
              ledger_url: Optional[str] = None,
              client: Optional[PubMedClient] = None,
              extractor: Optional[ExtractorProvider] = None) -> Tuple[KnowledgeGraph, BuildReport]:
    if (corpus_path is None) == (seed is None):
        raise ConfigError('build needs exactly one of a corpus path or a seed query')
    graph = load_snapshot(base) if base else None
    if graph is not None and graph.fusion_params != config.fusion_params():
        logger.warning("base snapshot fusion params %s override the configured ones", graph.fusion_params)
    ledger = Ledger(ledger_url) if ledger_url else None
    builder = Builder(config, graph, extractor, ledger)
    if corpus_path is not None:
        builder.ingest(read_corpus(corpus_path))
    else:
        builder.search(seed, client or PubMedClient(rate_limit=config.ncbi_rate_limit, timeout=config.request_timeout))
    return builder.finish()
