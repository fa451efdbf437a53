# Memforge embeddings and the LTM memory bank
#
# The builtin provider is a signed feature-hashing embedding over character 3-grams.  It needs no
# model and no shared PRNG, so every implementation that follows the same recipe produces the
# same bits.

from __future__ import annotations
from typing import List, Protocol, Sequence, Tuple
from functools import lru_cache
import hashlib
import json
import logging
import struct

import numpy as np

from corpus import normalize_text
from errors import ConfigError, DataError, DimensionMismatchError, EmptyEvidenceError, EmptyLTMError, SnapshotNotFoundError
from models import *

logger = logging.getLogger(__name__)

NGRAM = 3
_HEADER = struct.Struct("<QQ")


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray:
        ...


@lru_cache(maxsize=1 << 16)
def _gram_hash(gram: str) -> Tuple[int, float]:
    digest = hashlib.sha256(gram.encode("utf-8")).digest()
    sign = -1.0 if digest[0] & 1 else 1.0
    return int.from_bytes(digest, "big"), sign


def embed_text(text: str, d: int) -> np.ndarray:
    """
    Signed hashing of the normalized text's character 3-grams into d buckets, L2-normalized.
    Text with no 3-gram (or whose contributions cancel) maps to the zero vector.
    """
    if d < 2:
        raise ConfigError(f'embedding dimension must be at least 2, got {d}')
    normalized = normalize_text(text)
    vec = np.zeros(d, dtype=np.float64)
    for i in range(len(normalized) - NGRAM + 1):
        value, sign = _gram_hash(normalized[i:i + NGRAM])
        vec[value % d] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        return vec
    return vec / norm


class BuiltinEmbedder:
    """
    The deterministic hash embedding as an EmbeddingProvider.
    """

    def __init__(self, dimension: int = 256):
        if dimension < 2:
            raise ConfigError(f'embedding dimension must be at least 2, got {dimension}')
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        return embed_text(text, self.dimension)


def make_embedder(config: PipelineConfig) -> EmbeddingProvider:
    if config.embedding == "builtin":
        return BuiltinEmbedder(config.dim)
    raise ConfigError(f'unknown embedding provider {config.embedding!r}')


def centroid(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    """
    Arithmetic mean per coordinate (not re-normalized).
    """
    if len(vectors) == 0:
        raise EmptyEvidenceError('centroid of an empty vector list')
    matrix = np.asarray(vectors, dtype=np.float64)
    if matrix.ndim != 2:
        raise DataError('centroid needs vectors of equal dimension')
    return matrix.mean(axis=0)


###
##  Memory bank
###

class MemoryBank:
    """
    N x d matrix of knowledge embeddings, one row per canonical edge, rows ordered by edge key.
    Immutable once built.
    """

    def __init__(self, matrix: np.ndarray, provenance: List[EdgeKey], built_from: str):
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(provenance):
            raise DataError('memory bank matrix shape %s does not match %d provenance keys' % (matrix.shape, len(provenance)))
        if len(set(provenance)) != len(provenance):
            raise DataError('memory bank provenance keys must be unique')
        matrix.setflags(write=False)
        self.matrix = matrix
        self.provenance = [tuple(k) for k in provenance]
        self.built_from = built_from
        self._rows = {key: i for i, key in enumerate(self.provenance)}

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def row_of(self, key: EdgeKey) -> int:
        return self._rows[tuple(key)]

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"MemoryBank(N={self.size}, d={self.dimension}, built_from={self.built_from!r})"


def build_memory_bank(graph, provider: EmbeddingProvider) -> MemoryBank:
    """
    One row per graph edge, rows in lexicographic edge-key order, row text "subject relation object".
    """
    keys, fingerprint = graph.edge_keys()
    if not keys:
        raise EmptyLTMError()
    rows = []
    for s, r, o in keys:
        row = provider.embed(f"{s} {r} {o}")
        if row.shape != (provider.dimension,):
            raise DimensionMismatchError(provider.dimension, row.shape[-1], "embedding")
        rows.append(row)
    bank = MemoryBank(np.vstack(rows), keys, fingerprint)
    logger.info("Built memory bank of %d rows (d=%d) from %s", bank.size, bank.dimension, bank.built_from)
    return bank


def _trailer(bank: MemoryBank) -> dict:
    return {"built_from": bank.built_from, "provenance": [list(k) for k in bank.provenance]}


def export_bank(bank: MemoryBank, path, fmt: str = "binary"):
    """
    binary: little-endian u64 N, u64 d, N*d float64 row-major, then a JSON trailer with provenance.
    json:   the same content as one plain JSON document, for debugging.
    """
    if fmt == "json":
        doc = dict(_trailer(bank), n=bank.size, d=bank.dimension, matrix=bank.matrix.tolist())
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
    elif fmt == "binary":
        write_matrix(path, bank.matrix, _trailer(bank))
    else:
        raise ConfigError(f'unknown bank format {fmt!r}')


def write_matrix(path, matrix: np.ndarray, trailer: dict):
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*matrix.shape))
        fh.write(matrix.tobytes())
        fh.write(json.dumps(trailer, sort_keys=True).encode("utf-8"))


def load_matrix(path) -> Tuple[np.ndarray, dict]:
    """
    Read a matrix written by export_bank/write_matrix (binary, or JSON when the path ends in .json).
    Also used for d x d projection matrices.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise SnapshotNotFoundError(path)
    if str(path).endswith(".json"):
        try:
            doc = json.loads(blob.decode("utf-8"))
            matrix = np.asarray(doc.pop("matrix"), dtype=np.float64).reshape(doc["n"], doc["d"])
        except (ValueError, KeyError) as e:
            raise DataError(f'{path}: invalid matrix document: {e}')
        return matrix, doc
    if len(blob) < _HEADER.size:
        raise DataError(f'{path}: truncated matrix header')
    n, d = _HEADER.unpack_from(blob)
    end = _HEADER.size + 8 * n * d
    if len(blob) < end:
        raise DataError(f'{path}: truncated matrix body')
    matrix = np.frombuffer(blob, dtype="<f8", count=n * d, offset=_HEADER.size).reshape(n, d).astype(np.float64)
    trailer = {}
    if len(blob) > end:
        try:
            trailer = json.loads(blob[end:].decode("utf-8"))
        except ValueError as e:
            raise DataError(f'{path}: invalid trailer: {e}')
    return matrix, trailer


def load_bank(path) -> MemoryBank:
    matrix, trailer = load_matrix(path)
    try:
        provenance = [tuple(k) for k in trailer["provenance"]]
        built_from = trailer["built_from"]
    except KeyError as e:
        raise DataError(f'{path}: bank export lacks {e}')
    return MemoryBank(matrix, provenance, built_from)
