import json

import pytest

from corpus import make_document
from embedding import BuiltinEmbedder
from extraction import make_triple
from graphstore import KnowledgeGraph
from models import *

DIM = 64


@pytest.fixture
def embedder():
    return BuiltinEmbedder(DIM)


@pytest.fixture
def triple(embedder):
    """
    factory for evidence triples embedded the way the extractors embed them
    """
    def make(subject, relation, obj, confidence=0.9, source="doc"):
        return make_triple(subject, relation, obj, confidence, embedder, make_document(source, source).digest)
    return make


@pytest.fixture
def graph():
    return KnowledgeGraph(FusionParams(alpha=0.9, F=1.0), ["glioblastoma", "lung adenocarcinoma"])


@pytest.fixture
def write_corpus(tmp_path):
    def write(texts, name="corpus.jsonl"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as fh:
            for i, text in enumerate(texts):
                fh.write(json.dumps({"id": f"pmid-{i}", "abstract": text}) + "\n")
        return str(path)
    return write
