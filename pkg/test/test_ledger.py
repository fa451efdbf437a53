import pytest

from corpus import dedup_batch, make_document
from ledger import Ledger
from models import *


@pytest.fixture
def ledger(tmp_path):
    return Ledger(f"sqlite:///{tmp_path / 'ledger.db'}")


def test_empty_ledger(ledger):
    assert ledger.load_memory() == HashMemory()
    assert ledger.issued_queries() == set()
    assert ledger.failed_documents() == []


def test_memory_survives_reopening(tmp_path):
    url = f"sqlite:///{tmp_path / 'ledger.db'}"
    docs = [make_document(str(i), text) for i, text in enumerate(["a b c", "d e f", "a b c"])]
    retained, memory = dedup_batch(docs, Ledger(url).load_memory())
    Ledger(url).commit_memory(memory)

    reopened = Ledger(url).load_memory()
    assert reopened == memory
    assert reopened.generation == 1
    again, _ = dedup_batch(docs, reopened)
    assert again == []
    assert len(retained) == 2


def test_commit_is_append_only(ledger):
    first = HashMemory(seen=frozenset({"aa", "bb"}), generation=1)
    ledger.commit_memory(first)
    ledger.commit_memory(HashMemory(seen=frozenset({"aa", "bb", "cc"}), generation=2))
    ledger.commit_memory(HashMemory(seen=frozenset({"dd"}), generation=3))
    memory = ledger.load_memory()
    assert memory.seen == {"aa", "bb", "cc", "dd"}
    assert memory.generation == 3


def test_record_outcomes(ledger, triple):
    good = make_document("1", "glioblastoma shows necrosis")
    bad = make_document("2", "lung adenocarcinoma shows lepidic growth")
    outcomes = [ExtractionOutcome(source_digest=good.digest, triples=[triple("glioblastoma", "EXHIBITS_FEATURE", "necrosis")]),
                ExtractionOutcome(source_digest=bad.digest, status=ExtractionStatus.failed, error="timed out")]
    ledger.record_outcomes([good, bad], outcomes)
    [failed] = ledger.failed_documents()
    assert (failed.source_id, failed.error, failed.triples) == ("2", "timed out", 0)

    ledger.record_outcomes([bad], [ExtractionOutcome(source_digest=bad.digest)])
    assert ledger.failed_documents() == []


def test_issued_queries(ledger):
    ledger.record_query(SearchQuery(text="glioblastoma", depth=0), 12)
    ledger.record_query(SearchQuery(text="necrosis", depth=1), 0)
    ledger.record_query(SearchQuery(text="glioblastoma", depth=0), 14)
    assert ledger.issued_queries() == {"glioblastoma", "necrosis"}
