# Memforge planted-fact evaluation
#
# Generates a synthetic abstract corpus with known disease -> feature facts hidden among
# distractor facts, builds the LTM with the mock extractor, and measures how often activation
# brings each planted edge into working memory as the token caps grow.

from __future__ import annotations
from typing import List, Sequence, Tuple
import csv
import io
import itertools
import logging
import random

import numpy as np

from activation import activate, tokens_from_text
from corpus import normalize_text
from embedding import build_memory_bank, make_embedder
from errors import ConfigError
from extraction import MockExtractor
from graphstore import KnowledgeGraph
from models import *
from pipeline import Builder

logger = logging.getLogger(__name__)


PLANTED_FACTS = (
    ("Glioblastoma",                      "palisading necrosis"),
    ("Lung adenocarcinoma",               "lepidic growth pattern"),
    ("Clear cell renal cell carcinoma",   "clear cytoplasm"),
    ("Papillary thyroid carcinoma",       "nuclear grooves"),
    ("Ductal carcinoma in situ",          "comedo necrosis"),
)
PLANTED_RELATION = "EXHIBITS_FEATURE"

_SYLLABLES = ("ka", "lo", "mi", "zu", "ter", "vax", "quo", "ryn", "bel", "dor", "fen", "gri",
              "hul", "jat", "nix", "pom", "sev", "tul", "wex", "yor")
_DISTRACTOR_TEMPLATES = ("{} shows {}.", "{} is associated with {}.", "{} indicates {}.")

CSV_COLUMNS = ("cap_D", "cap_S", "recall", "mean_score")


class EvalRow(BaseModel):
    cap_D: int
    cap_S: int
    recall: float
    mean_score: float


def _nonce(rng: random.Random, words: int) -> str:
    return " ".join("".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 3))) for _ in range(words))


def make_synthetic_corpus(n_docs: int = 50,
                          n_planted: int = 5,
                          seed: int = 0,
                          noise: float = 0.0) -> Tuple[List[CorpusRecord], List[Tuple[str, str]]]:
    """
    n_planted documents each state one planted fact; the remaining documents state distractor
    facts between nonce entities.  With noise > 0 that fraction of distractors links a nonce
    entity to one of the planted features instead.
    """
    if not 1 <= n_planted <= len(PLANTED_FACTS):
        raise ConfigError(f'n_planted must lie in [1, {len(PLANTED_FACTS)}], got {n_planted}')
    if n_docs < n_planted:
        raise ConfigError(f'n_docs ({n_docs}) must be at least n_planted ({n_planted})')
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f'noise must lie in [0, 1], got {noise}')
    rng = random.Random(seed)
    planted = list(PLANTED_FACTS[:n_planted])
    texts = [f"{disease} shows {feature}." for disease, feature in planted]
    for _ in range(n_docs - n_planted):
        subject = _nonce(rng, 2)
        if rng.random() < noise:
            obj = rng.choice(planted)[1]
        else:
            obj = _nonce(rng, rng.randint(1, 2))
        texts.append(rng.choice(_DISTRACTOR_TEMPLATES).format(subject.capitalize(), obj))
    rng.shuffle(texts)
    records = [CorpusRecord(id=f"synthetic-{i:04d}", abstract=text) for i, text in enumerate(texts)]
    return records, planted


def sweep_caps(caps: Sequence[int], grid: bool = False) -> List[Tuple[int, int]]:
    caps = sorted(set(caps))
    if not caps or caps[0] < 1:
        raise ConfigError('caps must be positive integers')
    if grid:
        return list(itertools.product(caps, caps))
    return [(k, k) for k in caps]


def evaluate(config: PipelineConfig,
             caps: Sequence[int] = (1, 2, 3, 4, 5),
             mode: ActivationMode = ActivationMode.fused,
             n_docs: int = 50,
             n_planted: int = 5,
             seed: int = 0,
             noise: float = 0.0,
             grid: bool = False) -> List[EvalRow]:
    """
    Recall@caps of the planted facts.  Each planted fact is queried with its feature text; a hit
    is the planted edge among the selected indices, scored by the score it was selected with.
    """
    records, planted = make_synthetic_corpus(n_docs, n_planted, seed, noise)
    embedder = make_embedder(config)
    graph = KnowledgeGraph(config.fusion_params(), [d for d, _ in planted])
    builder = Builder(config, graph, MockExtractor(RelationSchema(), embedder))
    builder.ingest(records)
    graph, _ = builder.finish()
    bank = build_memory_bank(graph, embedder)

    targets = [(bank.row_of((normalize_text(d), PLANTED_RELATION, normalize_text(f))), tokens_from_text(f, embedder))
               for d, f in planted]
    rows = []
    for cap_D, cap_S in sweep_caps(caps, grid):
        activation_config = config.activation_config(cap_dynamic=cap_D, cap_static=cap_S)
        hits = []
        scores = []
        for row, X in targets:
            result = activate(bank, X, activation_config, mode)
            hit = row in result.indices
            hits.append(hit)
            scores.append(result.scores[result.indices.index(row)] if hit else 0.0)
        rows.append(EvalRow(cap_D=cap_D, cap_S=cap_S, recall=float(np.mean(hits)), mean_score=float(np.mean(scores))))
        logger.info("caps (%d, %d) %s: recall %.3f", cap_D, cap_S, mode.value, rows[-1].recall)
    return rows


def to_csv(rows: Sequence[EvalRow]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([r.cap_D, r.cap_S, "%.6f" % r.recall, "%.6f" % r.mean_score])
    return out.getvalue()
