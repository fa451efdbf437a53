# Remote LLM extractor
#
# POSTs {"text", "relations", "prompt", "prompt_version"} to an extraction endpoint and expects
# {"triples": [{"s", "r", "o", "c"}]} back.  Transport failures and unparseable bodies are retried;
# a document that still fails is reported as extraction-failed and the pipeline moves on.

from __future__ import annotations
from typing import List, Optional, Tuple
from pathlib import Path
import logging
import math
import os

import requests
from retrying import Retrying

from corpus import normalize_text
from errors import ExtractorResponseError, NetworkError
from extraction import make_triple
from models import *

logger = logging.getLogger(__name__)

API_KEY_ENV = "MEMFORGE_LLM_API_KEY"
PROMPT_VERSION = "extract_v1"
PROMPT_PATH = Path(__file__).parent / "prompts" / f"{PROMPT_VERSION}.txt"


def load_prompt(path=PROMPT_PATH) -> str:
    return Path(path).read_text(encoding="utf-8")


def _retriable(e):
    return isinstance(e, (NetworkError, ExtractorResponseError))


class RemoteExtractor:

    def __init__(self,
                 endpoint: str,
                 schema: RelationSchema,
                 embedder,
                 api_key: Optional[str] = None,
                 retries: int = 3,
                 timeout: float = 30.0,
                 wait_ms: int = 500,
                 session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self.schema = schema
        self.embedder = embedder
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.retries = retries
        self.timeout = timeout
        self.wait_ms = wait_ms
        # no adapter-level retries: attempts are counted by Retrying below
        self.session = session or requests.session()
        self.prompt = load_prompt()

    def _payload(self, doc: Document) -> dict:
        relations = list(self.schema.relations)
        return {"text": doc.raw_text,
                "relations": relations,
                "prompt": self.prompt.format(relations=", ".join(relations), text=doc.raw_text),
                "prompt_version": PROMPT_VERSION}

    def _request(self, payload: dict) -> list:
        headers = {"authorization": "Bearer %s" % self.api_key} if self.api_key else {}
        try:
            resp = self.session.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as e:
            logger.warning("extractor request failed: %s", e)
            raise NetworkError(f'extractor request failed: {e}')
        try:
            body = resp.json()
        except ValueError as e:
            logger.warning("extractor returned unparseable body: %s", e)
            raise ExtractorResponseError(f'unparseable extractor response: {e}')
        if not isinstance(body, dict) or not isinstance(body.get("triples"), list):
            raise ExtractorResponseError('extractor response lacks a "triples" list')
        return body["triples"]

    def _parse_item(self, item, digest) -> Optional[EvidenceTriple]:
        if not isinstance(item, dict):
            return None
        s, r, o, c = item.get("s"), item.get("r"), item.get("o"), item.get("c")
        if not isinstance(s, str) or not isinstance(o, str) or not isinstance(r, str):
            return None
        if not normalize_text(s) or not normalize_text(o):
            return None
        if r not in self.schema:
            return None
        if isinstance(c, bool) or not isinstance(c, (int, float)):
            return None
        if not math.isfinite(c) or not 0.0 <= c <= 1.0:
            return None
        return make_triple(s, r, o, float(c), self.embedder, digest)

    def parse_items(self, items: list, digest: str) -> Tuple[List[EvidenceTriple], int]:
        triples = []
        dropped = 0
        for item in items:
            triple = self._parse_item(item, digest)
            if triple is None:
                dropped += 1
            else:
                triples.append(triple)
        if dropped:
            logger.warning("dropped %d malformed extractor items for %s", dropped, digest[:12])
        return triples, dropped

    def extract(self, doc: Document) -> ExtractionOutcome:
        retrying = Retrying(stop_max_attempt_number=self.retries,
                            wait_fixed=self.wait_ms,
                            retry_on_exception=_retriable)
        try:
            items = retrying.call(self._request, self._payload(doc))
        except (NetworkError, ExtractorResponseError) as e:
            logger.warning("extraction failed for %s after %d attempts: %s", doc.source_id, self.retries, e)
            return ExtractionOutcome(source_digest=doc.digest, status=ExtractionStatus.failed, error=e.message)
        triples, dropped = self.parse_items(items, doc.digest)
        return ExtractionOutcome(source_digest=doc.digest, triples=triples, dropped=dropped)
