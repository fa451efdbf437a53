# Memforge activation
#
# Moves a small, relevance-scaled subset of the memory bank into working memory for one input
# sequence.  Static activation ranks rows by cosine similarity to the pooled query, dynamic
# activation by a masked scaled dot-product softmax.  Everything here is a pure function of its
# arguments.

from __future__ import annotations
from typing import Collection, Iterable, Optional
import logging
import math

import numpy as np

from embedding import EmbeddingProvider, MemoryBank
from errors import ConfigError, DataError, DimensionMismatchError, EmptyLTMError, MemoryFullyMaskedError, NoActivationError, UnknownEntityError
from extraction import split_sentences
from models import *

logger = logging.getLogger(__name__)

MASK_SENTINEL = -1e9


def as_tokens(X) -> np.ndarray:
    X = np.array(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DataError(f'input sequence must be a non-empty T x d matrix, got shape {X.shape}')
    if not np.all(np.isfinite(X)):
        raise DataError('input sequence holds non-finite values')
    return X


def tokens_from_text(text: str, embedder: EmbeddingProvider) -> np.ndarray:
    """
    one embedded row per sentence of the text
    """
    sentences = split_sentences(text) or [text]
    return np.vstack([embedder.embed(s) for s in sentences])


def compute_query(X, epsilon: float = 1e-8) -> np.ndarray:
    """
    q = mean(X, axis=0) / (||mean|| + epsilon)
    """
    xbar = as_tokens(X).mean(axis=0)
    return xbar / (np.linalg.norm(xbar) + epsilon)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def top_k(scores: np.ndarray, k: int, candidates: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Indices of the k highest scores, descending, ties broken by ascending index.
    candidates is an optional boolean vector of eligible rows.
    """
    order = np.lexsort((np.arange(len(scores)), -scores))
    if candidates is not None:
        order = order[candidates[order]]
    return order[:k]


###
##  Masks
###

def _masked_rows(mask: Optional[np.ndarray], n: int) -> np.ndarray:
    if mask is None:
        return np.zeros(n, dtype=bool)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (n,):
        raise DimensionMismatchError(n, mask.shape[0] if mask.ndim else 0, "mask")
    return mask < 0


def suppression_mask(n: int, indices: Iterable[int]) -> np.ndarray:
    """
    mask that disables the given bank rows, e.g. ones already selected on an earlier pass
    """
    mask = np.zeros(n, dtype=np.float64)
    for i in indices:
        if not 0 <= i < n:
            raise DataError(f'mask index {i} outside a bank of {n} rows')
        mask[i] = -np.inf
    return mask


def structural_mask(bank: MemoryBank, allowed_keys: Collection[EdgeKey]) -> np.ndarray:
    """
    mask that disables every row whose edge is outside allowed_keys
    """
    allowed = {tuple(k) for k in allowed_keys}
    return np.array([0.0 if key in allowed else -np.inf for key in bank.provenance], dtype=np.float64)


def combine_masks(*masks: Optional[np.ndarray]) -> Optional[np.ndarray]:
    present = [np.asarray(m, dtype=np.float64) for m in masks if m is not None]
    if not present:
        return None
    return np.where(np.logical_or.reduce([m < 0 for m in present]), -np.inf, 0.0)


def request_mask(bank: MemoryBank,
                 graph,
                 exclude: Iterable[int] = (),
                 restrict_feature: Optional[str] = None) -> Optional[np.ndarray]:
    """
    Mask for an activation request: excluded rows are suppressed and, given a feature id, every
    row outside the feature's edges.  None when nothing is masked.
    """
    exclude = list(exclude)
    suppress = suppression_mask(bank.size, exclude) if exclude else None
    restrict = None
    if restrict_feature is not None:
        lookup = graph.lookup(restrict_feature)
        if not lookup.known:
            raise UnknownEntityError(restrict_feature)
        restrict = structural_mask(bank, [e.key for e in lookup.edges])
    return combine_masks(suppress, restrict)


###
##  Activation
###

def _check_query(bank: MemoryBank, q) -> np.ndarray:
    if bank.size == 0:
        raise EmptyLTMError()
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (bank.dimension,):
        raise DimensionMismatchError(bank.dimension, q.shape[-1] if q.ndim else 0, "query")
    return q


def _result(mode, bank, indices, scores, scale, degenerate, distribution=None) -> ActivationResult:
    indices = [int(i) for i in indices]
    return ActivationResult(mode=mode,
                            indices=indices,
                            scores=[float(s) for s in scores],
                            sources=[mode] * len(indices),
                            wm_rows=bank.matrix[indices] * np.asarray(scale, dtype=np.float64).reshape(-1, 1),
                            provenance={i: bank.provenance[i] for i in indices},
                            distribution=distribution,
                            degenerate=degenerate)


def static_activate(bank: MemoryBank, q, k_S: int, mask: Optional[np.ndarray] = None) -> ActivationResult:
    """
    Cosine ranking; zero-norm rows score 0.  Selected rows are scaled by their cosine clamped to
    [0, 1].  A zero query scores every row 0 and the selection falls back to index order.
    """
    q = _check_query(bank, q)
    if k_S < 1:
        raise ConfigError(f'cap_static must be at least 1, got {k_S}')
    masked = _masked_rows(mask, bank.size)
    if masked.all():
        raise MemoryFullyMaskedError()
    qnorm = np.linalg.norm(q)
    row_norms = np.linalg.norm(bank.matrix, axis=1)
    scores = np.zeros(bank.size, dtype=np.float64)
    degenerate = qnorm == 0.0
    if not degenerate:
        nonzero = row_norms > 0
        scores[nonzero] = (bank.matrix[nonzero] @ q) / (row_norms[nonzero] * qnorm)
    selected = top_k(scores, k_S, ~masked)
    chosen = scores[selected]
    return _result(ActivationMode.static, bank, selected, chosen, np.clip(chosen, 0.0, 1.0), bool(degenerate))


def dynamic_activate(bank: MemoryBank, q, config: ActivationConfig) -> ActivationResult:
    """
    logits = (M Pm^T)(Pq q) / sqrt(d) + mask, J = softmax(logits), top cap_dynamic rows by logit
    (the same order as J), each selected row scaled by its J.  Masked rows carry the sentinel and
    are never selected.
    """
    q = _check_query(bank, q)
    d = bank.dimension
    masked = _masked_rows(config.mask, bank.size)
    if masked.all():
        raise MemoryFullyMaskedError()
    q_proj = q
    memory = bank.matrix
    if config.projection_query is not None:
        q_proj = _projection(config.projection_query, d) @ q
    if config.projection_memory is not None:
        memory = memory @ _projection(config.projection_memory, d).T
    logits = (memory @ q_proj) / math.sqrt(d) + np.where(masked, MASK_SENTINEL, 0.0)
    J = softmax(logits)
    # J underflows to exact ties at large logit scales; the logits keep the order
    selected = top_k(logits, config.cap_dynamic, ~masked)
    chosen = J[selected]
    return _result(ActivationMode.dynamic, bank, selected, chosen, chosen, not np.any(q), distribution=J)


def _projection(P, d) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (d, d):
        raise DimensionMismatchError(d, P.shape[-1] if P.ndim else 0, "projection")
    return P


def adaptive_select(static: ActivationResult, dynamic: ActivationResult, config: ActivationConfig) -> ActivationResult:
    """
    Union of the two capped selections: dynamic entries by score, then static-only entries by
    score.  An index chosen by both keeps its dynamic copy.  The relevance floor applies after
    the merge, each entry compared in its own mode's scale.
    """
    if not static.indices and not dynamic.indices:
        raise NoActivationError()
    entries = [(i, s, ActivationMode.dynamic, row) for i, s, row in zip(dynamic.indices, dynamic.scores, dynamic.wm_rows)]
    taken = set(dynamic.indices)
    entries += [(i, s, ActivationMode.static, row) for i, s, row in zip(static.indices, static.scores, static.wm_rows)
                if i not in taken]
    if config.relevance_floor is not None:
        entries = [e for e in entries if e[1] >= config.relevance_floor]
    if not entries:
        raise NoActivationError('no activation above the relevance floor')
    provenance = dict(static.provenance)
    provenance.update(dynamic.provenance)
    return ActivationResult(mode=ActivationMode.fused,
                            indices=[e[0] for e in entries],
                            scores=[e[1] for e in entries],
                            sources=[e[2] for e in entries],
                            wm_rows=np.vstack([e[3] for e in entries]),
                            provenance={e[0]: provenance[e[0]] for e in entries},
                            distribution=dynamic.distribution,
                            degenerate=static.degenerate or dynamic.degenerate)


def activate(bank: MemoryBank, X, config: ActivationConfig, mode: ActivationMode = ActivationMode.fused) -> ActivationResult:
    """
    pool X into a query and run the requested activation mode; masks apply to both modes
    """
    q = compute_query(X, config.epsilon)
    if mode == ActivationMode.static:
        return static_activate(bank, q, config.cap_static, config.mask)
    if mode == ActivationMode.dynamic:
        return dynamic_activate(bank, q, config)
    return adaptive_select(static_activate(bank, q, config.cap_static, config.mask),
                           dynamic_activate(bank, q, config),
                           config)


def assemble_augmented(wm: ActivationResult, X) -> np.ndarray:
    """
    X* = [wm rows; X]
    """
    X = as_tokens(X)
    if not wm.indices:
        raise NoActivationError()
    if wm.wm_rows.shape[1] != X.shape[1]:
        raise DimensionMismatchError(wm.wm_rows.shape[1], X.shape[1], "input token")
    return np.vstack([wm.wm_rows, X])


def activation_report(result: ActivationResult, bank: MemoryBank, graph, X) -> ActivationResponse:
    X = as_tokens(X)
    entries = []
    for i, score, source in zip(result.indices, result.scores, result.sources):
        key = result.provenance[i]
        edge = graph.edge(key)
        entries.append(ActivationEntry(index=i,
                                       score=score,
                                       source=source,
                                       edge=key,
                                       triple=edge.rendered(),
                                       fused_weight=edge.fused_weight))
    return ActivationResponse(mode=result.mode,
                              degenerate=result.degenerate,
                              entries=entries,
                              wm_shape=(len(result.indices), bank.dimension),
                              augmented_shape=(len(result.indices) + X.shape[0], bank.dimension),
                              bank=bank.built_from)


###
##  Reference single-head attention
###

def _attention_forward(Xstar, W_q, W_k, W_v):
    Xstar = np.asarray(Xstar, dtype=np.float64)
    scale = 1.0 / math.sqrt(Xstar.shape[1])
    Q, K, V = Xstar @ W_q, Xstar @ W_k, Xstar @ W_v
    A = softmax((Q @ K.T) * scale, axis=1)
    return Q, K, V, A, scale


def attention_weights(Xstar, W_q, W_k, W_v) -> np.ndarray:
    return _attention_forward(Xstar, W_q, W_k, W_v)[3]


def reference_attention(Xstar, W_q, W_k, W_v) -> np.ndarray:
    """
    softmax((X Wq)(X Wk)^T / sqrt(d)) (X Wv); verification only, nothing is trained
    """
    _, _, V, A, _ = _attention_forward(Xstar, W_q, W_k, W_v)
    return A @ V


def reference_attention_grad(Xstar, W_q, W_k, W_v, G) -> np.ndarray:
    """
    Gradient with respect to Xstar of sum(G * reference_attention(Xstar, ...)).
    """
    Xstar = np.asarray(Xstar, dtype=np.float64)
    Q, K, V, A, scale = _attention_forward(Xstar, W_q, W_k, W_v)
    G = np.asarray(G, dtype=np.float64)
    dA = G @ V.T
    dV = A.T @ G
    dS = A * (dA - (dA * A).sum(axis=1, keepdims=True))
    dQ = dS @ K * scale
    dK = dS.T @ Q * scale
    return dQ @ np.asarray(W_q).T + dK @ np.asarray(W_k).T + dV @ np.asarray(W_v).T
