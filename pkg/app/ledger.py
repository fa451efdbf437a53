# Memforge build ledger
#
# Optional SQL persistence for everything a build must remember between runs: the hash memory of
# seen abstract digests, the extraction outcome of each document, and the literature queries
# already issued.  Any SQLAlchemy URL works; sqlite is the default.

from __future__ import annotations
from typing import Iterable, List, Optional, Set
from time import time
import logging

from sqlmodel import Field, Session, SQLModel, create_engine, select
from sqlalchemy import func
from sqlalchemy.exc import SQLAlchemyError

from errors import DataError
from models import Document, ExtractionOutcome, ExtractionStatus, HashMemory, SearchQuery

logger = logging.getLogger(__name__)


###
##  Tables
###

class SeenDigest(SQLModel, table=True):
    digest: str        = Field(primary_key=True, description='Hex SHA-256 of a normalized abstract.')
    generation: int    = Field(index=True, description='Dedup batch that first committed this digest.')
    first_seen: float  = Field(default_factory=time, description='epoch time the digest was first committed.')


class DocumentRecord(SQLModel, table=True):
    digest: str          = Field(primary_key=True, description='Digest of the extracted document.')
    source_id: str       = Field(index=True, description='Opaque source id, e.g. a PubMed id.')
    status: str          = Field(description='ok or extraction-failed.')
    triples: int         = Field(default=0, description='Triples the extractor produced.')
    dropped: int         = Field(default=0, description='Extractor items discarded as malformed.')
    error: Optional[str] = Field(default=None, description='Failure reason when status is extraction-failed.')
    created_at: float    = Field(default_factory=time, description='epoch time of the extraction.')


class IssuedQuery(SQLModel, table=True):
    text: str          = Field(primary_key=True, description='Literature search query text.')
    depth: int         = Field(description='Expansion depth the query was issued at.')
    results: int       = Field(default=0, description='Number of ids the search returned.')
    issued_at: float   = Field(default_factory=time, description='epoch time the query was issued.')


###
##  Ledger
###

class Ledger:

    def __init__(self, url: str = "sqlite:///memforge.db"):
        self.url = url
        try:
            self.engine = create_engine(url, echo=False)
            SQLModel.metadata.create_all(self.engine)
        except SQLAlchemyError as e:
            raise DataError(f'cannot open ledger {url}: {e}')

    def load_memory(self) -> HashMemory:
        with Session(self.engine) as session:
            digests = session.exec(select(SeenDigest.digest)).all()
            generation = session.exec(select(func.max(SeenDigest.generation))).one()
        memory = HashMemory(seen=frozenset(digests), generation=generation or 0)
        logger.info("Loaded %d seen digests (generation %d) from %s", len(memory.seen), memory.generation, self.url)
        return memory

    def commit_memory(self, memory: HashMemory):
        """
        Insert the digests of memory that the ledger does not know yet.  Digests are never removed.
        """
        with Session(self.engine) as session:
            known = set(session.exec(select(SeenDigest.digest)).all())
            new = sorted(memory.seen - known)
            for digest in new:
                session.add(SeenDigest(digest=digest, generation=memory.generation))
            session.commit()
        logger.info("Committed %d new digests at generation %d", len(new), memory.generation)

    def record_outcomes(self, docs: Iterable[Document], outcomes: Iterable[ExtractionOutcome]):
        by_digest = {d.digest: d for d in docs}
        with Session(self.engine) as session:
            for outcome in outcomes:
                doc = by_digest.get(outcome.source_digest)
                session.merge(DocumentRecord(digest=outcome.source_digest,
                                             source_id=doc.source_id if doc else "",
                                             status=outcome.status.value,
                                             triples=len(outcome.triples),
                                             dropped=outcome.dropped,
                                             error=outcome.error))
            session.commit()

    def failed_documents(self) -> List[DocumentRecord]:
        with Session(self.engine) as session:
            statement = select(DocumentRecord).where(DocumentRecord.status == ExtractionStatus.failed.value)
            return list(session.exec(statement.order_by(DocumentRecord.digest)))

    def issued_queries(self) -> Set[str]:
        with Session(self.engine) as session:
            return set(session.exec(select(IssuedQuery.text)).all())

    def record_query(self, query: SearchQuery, results: int):
        with Session(self.engine) as session:
            session.merge(IssuedQuery(text=query.text, depth=query.depth, results=results))
            session.commit()
