# Memforge activation service
#
# Serves one LTM snapshot read-only: the snapshot named by MEMFORGE_SNAPSHOT (and optionally a
# config document named by MEMFORGE_CONFIG) is loaded at startup and its memory bank built once.

from __future__ import annotations
from typing import Dict, Optional
import logging
import os

from fastapi import FastAPI, HTTPException

from config import load_config, load_synonyms
from embedding import MemoryBank, build_memory_bank, make_embedder
from graphstore import KnowledgeGraph, load_snapshot
from models import *

logger = logging.getLogger(__name__)

SNAPSHOT_ENV = "MEMFORGE_SNAPSHOT"
CONFIG_ENV = "MEMFORGE_CONFIG"


class LTMService:
    """
    The graph and bank being served.  Both are immutable once loaded, so handlers share them freely.
    """

    def __init__(self):
        self.graph: Optional[KnowledgeGraph] = None
        self.bank: Optional[MemoryBank] = None
        self.embedder = None
        self.config = PipelineConfig()
        self.synonyms: Dict[str, str] = {}

    def load(self, graph: KnowledgeGraph, config: PipelineConfig):
        self.config = config
        self.embedder = make_embedder(config)
        self.synonyms = load_synonyms(config.synonym_table)
        self.bank = build_memory_bank(graph, self.embedder)
        self.graph = graph
        logger.info("Serving %r", self.bank)

    def require(self):
        if self.graph is None:
            raise HTTPException(status_code=404, detail="No LTM loaded.")
        return self


service = LTMService()


app = FastAPI(
    title='memforge',
    version='0.1',
    summary='Memforge LTM activation API',
    description='Feature lookups over a pathology knowledge graph and working-memory activation over its memory bank.',
)


@app.on_event("startup")
def on_startup():
    path = os.environ.get(SNAPSHOT_ENV)
    if not path:
        logger.warning("%s is not set; serving without an LTM", SNAPSHOT_ENV)
        return
    service.load(load_snapshot(path), load_config(os.environ.get(CONFIG_ENV)))


# import endpoints
import routes
