import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from corpus import make_document
from errors import ConfigError
from extraction import MockExtractor, extract_documents, extract_mock, filter_by_confidence, split_sentences
from models import *


def _summary(triples):
    return [(t.subject, t.relation, t.object, t.confidence) for t in triples]


def test_extract_mock_patterns(embedder):
    schema = RelationSchema()
    doc = make_document("1", "glioblastoma shows necrosis")
    assert _summary(extract_mock(doc, schema, embedder)) == [("glioblastoma", "EXHIBITS_FEATURE", "necrosis", 0.9)]

    assert extract_mock(make_document("2", "the weather is nice"), schema, embedder) == []

    doc = make_document("3", "x is associated with y. x indicates z")
    assert _summary(extract_mock(doc, schema, embedder)) == [("x", "ASSOCIATED_WITH", "y", 0.8),
                                                            ("x", "INDICATES", "z", 0.85)]


def test_extract_mock_first_pattern_wins(embedder):
    doc = make_document("1", "Tumor A indicates that it shows mitoses.")
    triples = extract_mock(doc, RelationSchema(), embedder)
    assert _summary(triples) == [("tumor a indicates that it", "EXHIBITS_FEATURE", "mitoses", 0.9)]


def test_extract_mock_triple_fields(embedder):
    doc = make_document("1", "Glioblastoma shows palisading necrosis.")
    [t] = extract_mock(doc, RelationSchema(), embedder)
    assert t.source_digest == doc.digest
    np.testing.assert_allclose(t.embedding, embedder.embed("glioblastoma EXHIBITS_FEATURE palisading necrosis"))
    assert abs(np.linalg.norm(t.embedding) - 1.0) < 1e-9


def test_extract_mock_respects_schema(embedder):
    schema = RelationSchema(relations=("INDICATES",))
    doc = make_document("1", "a shows b. c indicates d.")
    triples = extract_mock(doc, schema, embedder)
    assert _summary(triples) == [("c", "INDICATES", "d", 0.85)]
    assert all(t.relation in schema for t in triples)


def test_extract_mock_is_deterministic(embedder):
    doc = make_document("1", "x shows y. y is associated with z.")
    first = [t.model_dump_json() for t in extract_mock(doc, RelationSchema(), embedder)]
    second = [t.model_dump_json() for t in extract_mock(doc, RelationSchema(), embedder)]
    assert first == second


def test_split_sentences():
    assert split_sentences("One. Two!  Three?\nFour") == ["One.", "Two!", "Three?", "Four"]
    assert split_sentences("") == []


def test_relation_schema_validation():
    with pytest.raises(ValueError):
        RelationSchema(relations=())
    with pytest.raises(ValueError):
        RelationSchema(relations=("A", "A"))


def test_filter_by_confidence(triple):
    triples = [triple("a", "INDICATES", "b", c) for c in (0.9, 0.5, 0.49)]
    assert [t.confidence for t in filter_by_confidence(triples, 0.5)] == [0.9, 0.5]
    assert filter_by_confidence(triples, 0.91) == []
    saturated = [triple("a", "INDICATES", "b", 1.0) for _ in range(3)]
    assert filter_by_confidence(saturated, 0.99) == saturated
    with pytest.raises(ConfigError):
        filter_by_confidence(triples, 1.0)
    with pytest.raises(ConfigError):
        filter_by_confidence(triples, 0.0)


@given(st.lists(st.floats(min_value=0.0, max_value=1.0), max_size=12),
       st.floats(min_value=0.01, max_value=0.99),
       st.floats(min_value=0.01, max_value=0.99))
def test_filter_is_a_projection(confidences, tau1, tau2):
    tau1, tau2 = min(tau1, tau2), max(tau1, tau2)
    triples = [EvidenceTriple(subject="a", relation="INDICATES", object="b", confidence=c, embedding=(1.0, 0.0), source_digest="d")
               for c in confidences]
    once = filter_by_confidence(triples, tau1)
    assert filter_by_confidence(once, tau1) == once
    higher = filter_by_confidence(triples, tau2)
    assert all(t in once for t in higher)


def test_extract_documents_sorted_by_digest(embedder):
    docs = [make_document(str(i), f"entity{i} shows feature{i}.") for i in range(20)]
    outcomes = extract_documents(docs, MockExtractor(RelationSchema(), embedder), workers=4)
    digests = [o.source_digest for o in outcomes]
    assert digests == sorted(d.digest for d in docs)
    assert all(o.status == ExtractionStatus.ok and len(o.triples) == 1 for o in outcomes)
