# Memforge knowledge graph store
#
# The long-term memory: a weighted directed multigraph keyed by canonical (subject, relation,
# object).  Each edge keeps its full evidence list and a noisy-or fused weight that is recomputed
# from that list on every upsert.

from __future__ import annotations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple
from threading import RLock
import hashlib
import json
import logging
import math
import os
import tempfile

import numpy as np
from pydantic import ValidationError

from corpus import normalize_text
from embedding import centroid
from errors import EmptyEvidenceError, EntityRejectedError, InvariantViolation, SnapshotCorruptError, SnapshotNotFoundError, SnapshotVersionError
from models import *

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1
WEIGHT_TOLERANCE = 1e-12


def canonicalize_entity(surface: str, synonym_table: Mapping[str, str]) -> str:
    """
    normalize the surface form, then map it through the synonym table (exact match on the
    normalized form); the normalized form itself is the canonical id otherwise
    """
    normalized = normalize_text(surface)
    if not normalized:
        raise EntityRejectedError(surface)
    return synonym_table.get(normalized, normalized)


def normalize_synonyms(table: Mapping[str, str]) -> Dict[str, str]:
    """
    normalize both sides of a surface->canonical table; entries that normalize to nothing are skipped
    """
    out = {}
    for surface, canonical in table.items():
        key, value = normalize_text(surface), normalize_text(canonical)
        if key and value:
            out[key] = value
    return out


def effective_contribution(confidence: float, embedding, zbar, alpha: float, F: float) -> float:
    """
    alpha * c * exp(-F * ||z - zbar||^2)
    """
    diff = np.asarray(embedding, dtype=np.float64) - zbar
    return alpha * confidence * math.exp(-F * float(diff @ diff))


def fuse_edge_weight(evidence: Sequence[Tuple[float, Sequence[float]]], alpha: float, F: float) -> float:
    """
    Noisy-or fusion of (confidence, embedding) pairs, each attenuated by alpha and by its
    distance to zbar, the centroid of all embeddings.
    """
    if not evidence:
        raise EmptyEvidenceError('an edge needs at least one piece of evidence')
    zbar = centroid([z for _, z in evidence])
    # w <- w + p(1 - w) equals 1 - prod(1 - p) and returns alpha*c exactly for one evidence
    weight = 0.0
    for c, z in evidence:
        p = effective_contribution(c, z, zbar, alpha, F)
        weight += p * (1.0 - weight)
    return weight


class KnowledgeGraph:
    """
    Single writer, many readers: upserts hold the lock while they swap in a fully built edge,
    readers take the lock only long enough to copy what they return.
    """

    def __init__(self,
                 fusion_params: Optional[FusionParams] = None,
                 disease_lexicon: Iterable[str] = ()):
        self.fusion_params = fusion_params or FusionParams()
        self.disease_lexicon = frozenset(n for n in (normalize_text(d) for d in disease_lexicon) if n)
        self.entities: Dict[str, Entity] = {}
        self.edges: Dict[EdgeKey, Edge] = {}
        self.phi: Dict[str, str] = {}
        self.psi: Dict[str, Set[EdgeKey]] = {}
        self._lock = RLock()

    def __len__(self):
        return len(self.edges)

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.fusion_params == other.fusion_params and
                self.disease_lexicon == other.disease_lexicon and
                self.entities == other.entities and
                self.edges == other.edges and
                self.phi == other.phi)

    def _entity_type(self, canonical_id: str) -> EntityType:
        if canonical_id in self.disease_lexicon:
            return EntityType.disease
        return EntityType.feature

    def extend_lexicon(self, names: Iterable[str]):
        """
        add disease names and retype the entities they name
        """
        with self._lock:
            self.disease_lexicon = self.disease_lexicon | {n for n in (normalize_text(d) for d in names) if n}
            for canonical_id, entity in self.entities.items():
                entity_type = self._entity_type(canonical_id)
                if entity.entity_type != entity_type:
                    self.entities[canonical_id] = entity.model_copy(update={"entity_type": entity_type})

    def _register(self, surface: str, canonical_id: str):
        entity = self.entities.get(canonical_id)
        forms = frozenset([surface]) | (entity.surface_forms if entity else frozenset())
        self.entities[canonical_id] = Entity(canonical_id=canonical_id,
                                             surface_forms=forms,
                                             entity_type=self._entity_type(canonical_id))
        self.phi[surface] = canonical_id

    def upsert(self, triple: EvidenceTriple, synonym_table: Mapping[str, str]) -> Edge:
        # both endpoints are resolved before anything is registered
        subject_id = canonicalize_entity(triple.subject, synonym_table)
        object_id = canonicalize_entity(triple.object, synonym_table)
        key = (subject_id, triple.relation, object_id)
        with self._lock:
            old = self.edges.get(key)
            evidence = (old.evidence if old else []) + [Evidence(confidence=triple.confidence,
                                                                 embedding=triple.embedding,
                                                                 source_digest=triple.source_digest)]
            weight = fuse_edge_weight([(e.confidence, e.embedding) for e in evidence],
                                      self.fusion_params.alpha, self.fusion_params.F)
            if not 0.0 <= weight <= 1.0:
                raise InvariantViolation(f'fused weight {weight!r} of edge {key} outside [0, 1]')
            self._register(triple.subject, subject_id)
            self._register(triple.object, object_id)
            edge = Edge(subject_id=subject_id,
                        relation=triple.relation,
                        object_id=object_id,
                        fused_weight=weight,
                        evidence=evidence)
            self.edges[key] = edge
            self.psi.setdefault(subject_id, set()).add(key)
            self.psi.setdefault(object_id, set()).add(key)
            return edge

    def edge(self, key: EdgeKey) -> Edge:
        with self._lock:
            return self.edges[tuple(key)]

    def edge_keys(self) -> Tuple[List[EdgeKey], str]:
        """
        sorted edge keys together with the fingerprint of the same state
        """
        with self._lock:
            return sorted(self.edges), self.fingerprint()

    def lookup(self, feature: str) -> FeatureLookup:
        with self._lock:
            keys = sorted(self.psi.get(feature, ()))
            return FeatureLookup(feature=feature,
                                 known=feature in self.entities,
                                 edges=[self.edges[k] for k in keys])

    def disease_nodes(self) -> Set[str]:
        with self._lock:
            return {i for i, e in self.entities.items() if e.entity_type == EntityType.disease}

    def subgraph(self, features: Iterable[str]) -> Subgraph:
        with self._lock:
            known = sorted({f for f in features if f in self.entities})
            keys = sorted(set().union(*(self.psi.get(f, set()) for f in known)))
            endpoints = sorted({k[0] for k in keys} | {k[2] for k in keys})
            return Subgraph(features=known,
                            entities=[self.entities[i] for i in endpoints],
                            edges=[self.edges[k] for k in keys],
                            diseases=[i for i in endpoints if self.entities[i].entity_type == EntityType.disease])

    def stats(self) -> GraphStats:
        with self._lock:
            edges = list(self.edges.values())
            weights = np.array([e.fused_weight for e in edges], dtype=np.float64)
            counts, bounds = np.histogram(weights, bins=10, range=(0.0, 1.0))
            histogram = {"%.1f-%.1f" % (lo, hi): int(n) for lo, hi, n in zip(bounds[:-1], bounds[1:], counts)}
            relations = {}
            for e in edges:
                relations[e.relation] = relations.get(e.relation, 0) + 1
            return GraphStats(entities=len(self.entities),
                              edges=len(edges),
                              evidence=sum(len(e.evidence) for e in edges),
                              diseases=len(self.disease_nodes()),
                              relations=dict(sorted(relations.items())),
                              weight_histogram=histogram,
                              fingerprint=self.fingerprint())

    def rebuild_psi(self):
        psi: Dict[str, Set[EdgeKey]] = {}
        for key in self.edges:
            psi.setdefault(key[0], set()).add(key)
            psi.setdefault(key[2], set()).add(key)
        self.psi = psi

    def to_snapshot(self) -> GraphSnapshot:
        with self._lock:
            return GraphSnapshot(version=SNAPSHOT_VERSION,
                                 fusion_params=self.fusion_params,
                                 entities=[self.entities[i] for i in sorted(self.entities)],
                                 edges=[self.edges[k] for k in sorted(self.edges)],
                                 phi=dict(sorted(self.phi.items())),
                                 disease_lexicon=sorted(self.disease_lexicon))

    def dumps(self) -> str:
        """
        canonical JSON text of the snapshot; floats use Python's shortest round-trip repr
        """
        doc = self.to_snapshot().model_dump(mode="json")
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"

    def fingerprint(self) -> str:
        return "v%d:%s" % (SNAPSHOT_VERSION, hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:16])


###
##  Module-level operations
###

def upsert_evidence(graph: KnowledgeGraph, triple: EvidenceTriple, synonym_table: Mapping[str, str]) -> KnowledgeGraph:
    graph.upsert(triple, synonym_table)
    return graph


def feature_index_lookup(graph: KnowledgeGraph, f: str) -> FeatureLookup:
    return graph.lookup(f)


def disease_nodes(graph: KnowledgeGraph) -> Set[str]:
    return graph.disease_nodes()


def feature_subgraph(graph: KnowledgeGraph, features: Iterable[str]) -> Subgraph:
    return graph.subgraph(features)


###
##  Snapshots
###

def save_snapshot(graph: KnowledgeGraph, path):
    """
    write to a temporary file next to path, then swap it in; a failed save leaves path untouched
    """
    path = os.fspath(path)
    text = graph.dumps()
    fd, tmp = tempfile.mkstemp(prefix=".snapshot-", suffix=".tmp", dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.info("Saved snapshot of %d entities / %d edges to %s", len(graph.entities), len(graph.edges), path)


def load_snapshot(path) -> KnowledgeGraph:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise SnapshotNotFoundError(path)
    except UnicodeDecodeError as e:
        raise SnapshotCorruptError(path, e)
    try:
        doc = json.loads(text)
    except ValueError as e:
        raise SnapshotCorruptError(path, e)
    if not isinstance(doc, dict) or not isinstance(doc.get("version"), int):
        raise SnapshotCorruptError(path, 'missing format version')
    if doc["version"] != SNAPSHOT_VERSION:
        raise SnapshotVersionError(path, doc["version"], SNAPSHOT_VERSION)
    try:
        snapshot = GraphSnapshot.model_validate(doc)
    except ValidationError as e:
        raise SnapshotCorruptError(path, e.errors()[0]["msg"])

    graph = KnowledgeGraph(snapshot.fusion_params, snapshot.disease_lexicon)
    graph.entities = {e.canonical_id: e for e in snapshot.entities}
    graph.edges = {e.key: e for e in snapshot.edges}
    graph.phi = dict(snapshot.phi)
    for key, edge in graph.edges.items():
        if key[0] not in graph.entities or key[2] not in graph.entities:
            raise SnapshotCorruptError(path, f'edge {key} has an unknown endpoint')
        weight = fuse_edge_weight([(e.confidence, e.embedding) for e in edge.evidence],
                                  snapshot.fusion_params.alpha, snapshot.fusion_params.F)
        if abs(weight - edge.fused_weight) > WEIGHT_TOLERANCE:
            raise SnapshotCorruptError(path, f'edge {key} weight does not match its evidence')
    graph.rebuild_psi()
    logger.info("Loaded snapshot of %d entities / %d edges from %s", len(graph.entities), len(graph.edges), path)
    return graph
