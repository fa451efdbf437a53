# Memforge endpoints

from __future__ import annotations
from typing import List
import logging

from fastapi import HTTPException, Path

from activation import activate, activation_report, as_tokens, request_mask, tokens_from_text
from errors import DataError, EntityRejectedError, UnknownEntityError
from graphstore import canonicalize_entity

from main import app, service

from models import *

logger = logging.getLogger(__name__)


###
##  Activation
###

@app.post('/activate', response_model=ActivationResponse)
def post_activate(body: ActivationRequest) -> ActivationResponse:
    """
    Activate working memory for a query given as a token matrix or as free text.
    """
    ltm = service.require()
    try:
        if body.text is not None:
            X = tokens_from_text(body.text, ltm.embedder)
        else:
            X = as_tokens(body.tokens)
        mask = request_mask(ltm.bank, ltm.graph, body.exclude, body.restrict_feature)
        config = ltm.config.activation_config(cap_dynamic=body.cap_dynamic, cap_static=body.cap_static, mask=mask)
        result = activate(ltm.bank, X, config, body.mode)
        return activation_report(result, ltm.bank, ltm.graph, X)
    except UnknownEntityError as e:
        raise HTTPException(status_code=404, detail=e.message)
    except DataError as e:
        raise HTTPException(status_code=400, detail=e.as_dict())


###
##  Graph
###

@app.get('/stats', response_model=GraphStats)
def get_stats() -> GraphStats:
    """
    Entity, edge and evidence counts of the served snapshot.
    """
    return service.require().graph.stats()


@app.get('/features/{feature_id}', response_model=Subgraph)
def get_features_feature_id(feature_id: str = Path(...)) -> Subgraph:
    """
    The subgraph around one feature: its edges, their endpoints and the diseases among them.
    """
    ltm = service.require()
    try:
        canonical_id = canonicalize_entity(feature_id, ltm.synonyms)
    except EntityRejectedError:
        raise HTTPException(status_code=404, detail="Feature not found")
    subgraph = ltm.graph.subgraph([canonical_id])
    if not subgraph.features:
        raise HTTPException(status_code=404, detail="Feature not found")
    return subgraph


@app.get('/diseases', response_model=List[str])
def get_diseases() -> List[str]:
    """
    Canonical ids of every disease node.
    """
    return sorted(service.require().graph.disease_nodes())
