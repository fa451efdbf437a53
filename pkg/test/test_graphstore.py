import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import graphstore
from errors import EmptyEvidenceError, EntityRejectedError, InvariantViolation, SnapshotCorruptError, SnapshotNotFoundError, SnapshotVersionError
from graphstore import (SNAPSHOT_VERSION, KnowledgeGraph, canonicalize_entity, disease_nodes, effective_contribution,
                        feature_index_lookup, feature_subgraph, fuse_edge_weight, load_snapshot, save_snapshot,
                        upsert_evidence)
from models import *


def direct_fusion(evidence, alpha, F):
    """
    1 - prod(1 - alpha c exp(-F ||z - zbar||^2)), evaluated in plain Python
    """
    m = len(evidence)
    d = len(evidence[0][1])
    zbar = [sum(z[j] for _, z in evidence) / m for j in range(d)]
    product = 1.0
    for c, z in evidence:
        dist2 = sum((z[j] - zbar[j]) ** 2 for j in range(d))
        product *= 1.0 - alpha * c * math.exp(-F * dist2)
    return 1.0 - product


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return tuple((v / np.linalg.norm(v)).tolist())


def raw_triple(s, r, o, c=0.9, z=(1.0, 0.0), digest="d0"):
    return EvidenceTriple(subject=s, relation=r, object=o, confidence=c, embedding=z, source_digest=digest)


###
##  canonicalize_entity
###

def test_canonicalize_entity():
    assert canonicalize_entity("GBM", {"gbm": "glioblastoma"}) == "glioblastoma"
    assert canonicalize_entity("Glioblastoma", {}) == "glioblastoma"
    with pytest.raises(EntityRejectedError):
        canonicalize_entity("!!!", {})


def test_upsert_registers_surface_forms(graph):
    synonyms = {"gbm": "glioblastoma"}
    graph.upsert(raw_triple("GBM", "EXHIBITS_FEATURE", "necrosis"), synonyms)
    graph.upsert(raw_triple("Glioblastoma", "EXHIBITS_FEATURE", "necrosis"), synonyms)
    assert list(graph.edges) == [("glioblastoma", "EXHIBITS_FEATURE", "necrosis")]
    entity = graph.entities["glioblastoma"]
    assert entity.surface_forms == {"GBM", "Glioblastoma"}
    assert entity.entity_type == EntityType.disease
    assert graph.phi == {"GBM": "glioblastoma", "Glioblastoma": "glioblastoma", "necrosis": "necrosis"}


###
##  fuse_edge_weight
###

def test_fusion_examples():
    assert fuse_edge_weight([(0.9, (1.0, 0.0))], 1.0, 1.0) == 0.9
    assert fuse_edge_weight([(0.8, (0.0, 1.0)), (0.6, (0.0, 1.0))], 1.0, 1.0) == pytest.approx(0.92, abs=1e-12)
    evidence = [(0.8, (1.0, 0.0)), (0.6, (0.0, 1.0))]
    expected = 1.0 - (1.0 - 0.72 * math.exp(-0.5)) * (1.0 - 0.54 * math.exp(-0.5))
    assert fuse_edge_weight(evidence, 0.9, 1.0) == pytest.approx(expected, abs=1e-12)
    assert fuse_edge_weight(evidence, 0.9, 1.0) == pytest.approx(0.6212, abs=1e-3)


def test_fusion_requires_evidence():
    with pytest.raises(EmptyEvidenceError):
        fuse_edge_weight([], 0.9, 1.0)


def test_fusion_matches_direct_formula():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        m = int(rng.integers(1, 9))
        d = int(rng.integers(1, 17))
        alpha = float(rng.uniform(0.01, 1.0))
        F = float(rng.uniform(0.01, 5.0))
        evidence = [(float(rng.uniform()), tuple(rng.normal(size=d).tolist())) for _ in range(m)]
        w = fuse_edge_weight(evidence, alpha, F)
        assert abs(w - direct_fusion(evidence, alpha, F)) < 1e-12
        assert 0.0 <= w < 1.0
        if m == 1:
            assert w == alpha * evidence[0][0]


def test_fusion_identical_embeddings_is_classical_noisy_or():
    rng = np.random.default_rng(5)
    for _ in range(200):
        m = int(rng.integers(1, 9))
        z = tuple(rng.normal(size=8).tolist())
        cs = rng.uniform(size=m).tolist()
        assert abs(fuse_edge_weight([(c, z) for c in cs], 1.0, 1.0) - (1.0 - np.prod([1.0 - c for c in cs]))) < 1e-12


evidence_lists = st.lists(st.tuples(st.floats(min_value=0.0, max_value=1.0),
                                    st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=3, max_size=3)),
                          min_size=1, max_size=8)


@given(evidence_lists, st.randoms())
def test_fusion_is_order_invariant(evidence, rnd):
    shuffled = list(evidence)
    rnd.shuffle(shuffled)
    assert abs(fuse_edge_weight(evidence, 0.9, 1.0) - fuse_edge_weight(shuffled, 0.9, 1.0)) < 1e-12


@given(evidence_lists, st.floats(min_value=0.01, max_value=1.0))
def test_fusion_grows_with_evidence_at_the_centroid(evidence, c):
    z = evidence[0][1]
    same = [(ci, z) for ci, _ in evidence]
    before = fuse_edge_weight(same, 0.9, 1.0)
    after = fuse_edge_weight(same + [(c, z)], 0.9, 1.0)
    assert after > before
    assert after < 1.0


@given(st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=4, max_size=4),
       st.floats(min_value=0.0, max_value=3.0),
       st.floats(min_value=0.0, max_value=3.0))
def test_penalty_never_rewards_distance(direction, near, far):
    zbar = np.zeros(4)
    v = np.asarray(direction)
    if np.linalg.norm(v) < 1e-6:
        v = np.ones(4)
    v = v / np.linalg.norm(v)
    near, far = min(near, far), max(near, far)
    assert effective_contribution(0.7, v * far, zbar, 0.9, 1.0) <= effective_contribution(0.7, v * near, zbar, 0.9, 1.0)


###
##  upsert / lookup / disease nodes
###

def test_upsert_single_triple(graph, triple):
    upsert_evidence(graph, triple("Glioblastoma", "EXHIBITS_FEATURE", "necrosis", 0.9), {})
    assert len(graph.entities) == 2
    assert len(graph.edges) == 1
    edge = graph.edges[("glioblastoma", "EXHIBITS_FEATURE", "necrosis")]
    assert edge.fused_weight == 0.9 * 0.9
    assert graph.entities["glioblastoma"].entity_type == EntityType.disease
    assert graph.entities["necrosis"].entity_type == EntityType.feature


def test_upsert_second_source_strengthens_edge(graph, triple):
    first = graph.upsert(triple("Glioblastoma", "EXHIBITS_FEATURE", "necrosis", 0.9, source="a"), {})
    second = graph.upsert(triple("Glioblastoma", "EXHIBITS_FEATURE", "necrosis", 0.7, source="b"), {})
    assert len(graph.edges) == 1
    assert len(second.evidence) == 2
    assert second.fused_weight > first.fused_weight
    assert [e.confidence for e in second.evidence] == [0.9, 0.7]


def test_upsert_with_synonyms_merges_edges(graph, triple):
    synonyms = {"gbm": "glioblastoma"}
    graph.upsert(triple("GBM", "EXHIBITS_FEATURE", "necrosis"), synonyms)
    graph.upsert(triple("glioblastoma", "EXHIBITS_FEATURE", "necrosis"), synonyms)
    assert list(graph.edges) == [("glioblastoma", "EXHIBITS_FEATURE", "necrosis")]
    assert len(graph.edges[("glioblastoma", "EXHIBITS_FEATURE", "necrosis")].evidence) == 2


def test_upsert_rejected_entity_leaves_graph_untouched(graph):
    with pytest.raises(EntityRejectedError):
        graph.upsert(raw_triple("glioblastoma", "INDICATES", "???"), {})
    assert graph.entities == {}
    assert graph.edges == {}


def test_upsert_weight_outside_unit_interval_is_an_invariant_violation(graph, monkeypatch):
    monkeypatch.setattr(graphstore, "fuse_edge_weight", lambda evidence, alpha, F: 1.5)
    with pytest.raises(InvariantViolation) as e:
        graph.upsert(raw_triple("glioblastoma", "INDICATES", "necrosis"), {})
    assert e.value.exit_code == 5
    assert graph.entities == {}
    assert graph.edges == {}
    assert graph.phi == {}


def test_distinct_relations_are_distinct_edges(graph):
    graph.upsert(raw_triple("a", "INDICATES", "b"), {})
    graph.upsert(raw_triple("a", "ASSOCIATED_WITH", "b"), {})
    assert len(graph.edges) == 2


def test_feature_index_lookup(graph):
    graph.upsert(raw_triple("a", "INDICATES", "b"), {})
    graph.upsert(raw_triple("c", "INDICATES", "b"), {})
    assert {e.key for e in feature_index_lookup(graph, "b").edges} == {("a", "INDICATES", "b"), ("c", "INDICATES", "b")}
    assert [e.key for e in feature_index_lookup(graph, "a").edges] == [("a", "INDICATES", "b")]
    unknown = feature_index_lookup(graph, "q")
    assert unknown.edges == []
    assert not unknown.known


def test_disease_nodes(graph):
    assert disease_nodes(graph) == set()
    graph.upsert(raw_triple("glioblastoma", "EXHIBITS_FEATURE", "necrosis"), {})
    graph.upsert(raw_triple("lung adenocarcinoma", "EXHIBITS_FEATURE", "lepidic growth"), {})
    graph.upsert(raw_triple("mitoses", "INDICATES", "grade 4"), {})
    assert disease_nodes(graph) == {"glioblastoma", "lung adenocarcinoma"}

    other = KnowledgeGraph(disease_lexicon=["Glioblastoma"])
    other.upsert(raw_triple("necrosis", "INDICATES", "glioblastoma"), {})
    assert disease_nodes(other) == {"glioblastoma"}


def test_extend_lexicon_retypes_entities(graph):
    graph.upsert(raw_triple("astrocytoma", "EXHIBITS_FEATURE", "necrosis"), {})
    assert disease_nodes(graph) == set()
    graph.extend_lexicon(["Astrocytoma"])
    assert disease_nodes(graph) == {"astrocytoma"}


def test_feature_subgraph(graph):
    graph.upsert(raw_triple("glioblastoma", "EXHIBITS_FEATURE", "necrosis"), {})
    graph.upsert(raw_triple("lung adenocarcinoma", "EXHIBITS_FEATURE", "necrosis"), {})
    graph.upsert(raw_triple("lung adenocarcinoma", "EXHIBITS_FEATURE", "lepidic growth"), {})
    sub = feature_subgraph(graph, ["necrosis", "nothing"])
    assert sub.features == ["necrosis"]
    assert [e.key for e in sub.edges] == [("glioblastoma", "EXHIBITS_FEATURE", "necrosis"),
                                          ("lung adenocarcinoma", "EXHIBITS_FEATURE", "necrosis")]
    assert [e.canonical_id for e in sub.entities] == ["glioblastoma", "lung adenocarcinoma", "necrosis"]
    assert sub.diseases == ["glioblastoma", "lung adenocarcinoma"]


def random_graph(rng, n_edges, d=3):
    names = [f"entity {i}" for i in range(int(rng.integers(2, 40)))]
    relations = list(DEFAULT_RELATIONS)
    graph = KnowledgeGraph(FusionParams(alpha=0.9, F=1.0), names[:3])
    for k in range(n_edges):
        s, o = (str(x) for x in rng.choice(names, size=2))
        z = rng.normal(size=d)
        graph.upsert(raw_triple(s, str(rng.choice(relations)), o, float(rng.uniform()), unit(z), f"digest-{k}"), {})
    return graph


def test_psi_matches_brute_force_scan():
    rng = np.random.default_rng(11)
    for _ in range(200):
        graph = random_graph(rng, int(rng.integers(0, 500)), d=2)
        for f in graph.entities:
            expected = {key for key in graph.edges if f in (key[0], key[2])}
            assert {e.key for e in graph.lookup(f).edges} == expected
        for key, edge in graph.edges.items():
            assert key[0] in graph.entities and key[2] in graph.entities
            assert abs(edge.fused_weight - fuse_edge_weight([(e.confidence, e.embedding) for e in edge.evidence], 0.9, 1.0)) < 1e-12


def test_concurrent_upserts_are_serialized():
    graph = KnowledgeGraph()
    triples = [raw_triple(f"s{i % 7}", "INDICATES", f"o{i % 5}", 0.5, digest=f"d{i}") for i in range(400)]
    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(lambda t: graph.upsert(t, {}), triples))
    assert sum(len(e.evidence) for e in graph.edges.values()) == 400
    for f in graph.entities:
        assert {e.key for e in graph.lookup(f).edges} == {k for k in graph.edges if f in (k[0], k[2])}


def test_readers_wait_for_the_writer_lock(graph):
    graph.upsert(raw_triple("glioblastoma", "INDICATES", "necrosis"), {})
    key = ("glioblastoma", "INDICATES", "necrosis")
    results = []
    with graph._lock:
        readers = [threading.Thread(target=lambda: results.append(graph.edge(key))),
                   threading.Thread(target=lambda: results.append(graph.edge_keys()))]
        for t in readers:
            t.start()
        for t in readers:
            t.join(timeout=0.2)
            assert t.is_alive()
        assert results == []
    for t in readers:
        t.join()
    assert len(results) == 2
    assert graph.edge(list(key)).key == key
    assert graph.edge_keys() == ([key], graph.fingerprint())

###
##  snapshots
###

def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    for i in range(20):
        graph = random_graph(rng, int(rng.integers(1, 60)), d=4)
        graph.phi["Entity 0"] = "entity 0"
        path = tmp_path / f"g{i}.json"
        save_snapshot(graph, path)
        loaded = load_snapshot(path)
        assert loaded == graph
        assert loaded.psi == graph.psi
        again = tmp_path / f"g{i}-again.json"
        save_snapshot(loaded, again)
        assert again.read_bytes() == path.read_bytes()


def test_snapshot_errors(tmp_path, graph):
    graph.upsert(raw_triple("glioblastoma", "EXHIBITS_FEATURE", "necrosis"), {})
    path = tmp_path / "g.json"
    save_snapshot(graph, path)
    text = path.read_text(encoding="utf-8")

    with pytest.raises(SnapshotNotFoundError):
        load_snapshot(tmp_path / "missing.json")

    truncated = tmp_path / "truncated.json"
    truncated.write_text(text[:len(text) // 2], encoding="utf-8")
    with pytest.raises(SnapshotCorruptError):
        load_snapshot(truncated)

    doc = json.loads(text)
    doc["version"] = SNAPSHOT_VERSION + 1
    future = tmp_path / "future.json"
    future.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(SnapshotVersionError):
        load_snapshot(future)

    doc = json.loads(text)
    doc["edges"][0]["fused_weight"] = 0.5
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(SnapshotCorruptError):
        load_snapshot(tampered)

    doc = json.loads(text)
    doc["entities"] = doc["entities"][:1]
    dangling = tmp_path / "dangling.json"
    dangling.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(SnapshotCorruptError):
        load_snapshot(dangling)

    doc = json.loads(text)
    doc["psi"] = {}
    extra = tmp_path / "extra.json"
    extra.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(SnapshotCorruptError):
        load_snapshot(extra)


def test_failed_save_keeps_the_old_snapshot(tmp_path, graph, monkeypatch):
    graph.upsert(raw_triple("glioblastoma", "EXHIBITS_FEATURE", "necrosis"), {})
    path = tmp_path / "g.json"
    save_snapshot(graph, path)
    before = path.read_bytes()

    def broken_replace(src, dst):
        raise OSError("disk full")

    graph.upsert(raw_triple("glioblastoma", "GRADED_AS", "who grade 4"), {})
    monkeypatch.setattr(graphstore.os, "replace", broken_replace)
    with pytest.raises(OSError):
        save_snapshot(graph, path)
    assert path.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["g.json"]


def test_fingerprint_tracks_content(graph):
    empty = graph.fingerprint()
    graph.upsert(raw_triple("glioblastoma", "EXHIBITS_FEATURE", "necrosis"), {})
    assert graph.fingerprint() != empty
    assert graph.fingerprint().startswith(f"v{SNAPSHOT_VERSION}:")
