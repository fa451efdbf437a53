# NCBI E-utilities client
#
# esearch turns a SearchQuery into PubMed ids, efetch (rettype=abstract) turns ids into
# CorpusRecords.  Requests are throttled to a fixed rate; that is the only politeness policy.

from __future__ import annotations
from typing import List, Optional
from threading import Lock
from time import monotonic, sleep
import logging
import os
import xml.etree.ElementTree as ET

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from errors import DataError, NetworkError
from models import *

logger = logging.getLogger(__name__)

EUTILS_URL = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils"
API_KEY_ENV = "MEMFORGE_NCBI_API_KEY"
KEYED_RATE_LIMIT = 10.0    # requests/s NCBI allows with an api key


def _retrying_session():
    session = requests.session()
    session.mount('https://', HTTPAdapter(max_retries=Retry(connect=5,
                                                            read=5,
                                                            status=5,
                                                            redirect=2,
                                                            backoff_factor=.5,
                                                            status_forcelist=(429, 500, 502, 503, 504))))
    return session


class PubMedClient:
    """
    Minimal esearch/efetch client.
    """

    def __init__(self,
                 api_key: Optional[str] = None,
                 rate_limit: float = 3.0,
                 timeout: float = 30.0,
                 session: Optional[requests.Session] = None):
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if self.api_key:
            rate_limit = max(rate_limit, KEYED_RATE_LIMIT)
        self.min_interval = 1.0 / rate_limit
        self.timeout = timeout
        self.session = session or _retrying_session()
        self._lock = Lock()
        self._last_request = 0.0

    def _throttle(self):
        with self._lock:
            wait = self._last_request + self.min_interval - monotonic()
            if wait > 0:
                sleep(wait)
            self._last_request = monotonic()

    def _get(self, endpoint: str, params: dict) -> requests.Response:
        params = dict(params, db="pubmed")
        if self.api_key:
            params["api_key"] = self.api_key
        self._throttle()
        try:
            resp = self.session.get(f"{EUTILS_URL}/{endpoint}", params=params, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as e:
            raise NetworkError(f'{endpoint} request failed: {e}')
        return resp

    def search(self, query: SearchQuery, retmax: int = 20) -> List[str]:
        """
        return the PubMed ids matching the query text
        """
        resp = self._get("esearch.fcgi", {"term": query.text, "retmax": retmax, "retmode": "json"})
        try:
            ids = resp.json()["esearchresult"]["idlist"]
        except (ValueError, KeyError) as e:
            raise DataError(f'Unexpected esearch response for {query.text!r}: {e}')
        logger.info("esearch %r (depth %d): %d ids", query.text, query.depth, len(ids))
        return [str(i) for i in ids]

    def fetch(self, pmids: List[str], batch_size: int = 100) -> List[CorpusRecord]:
        """
        return abstracts for the given ids; articles without abstract text are skipped
        """
        records = []
        for i in range(0, len(pmids), batch_size):
            batch = pmids[i:i + batch_size]
            resp = self._get("efetch.fcgi", {"id": ",".join(batch), "rettype": "abstract", "retmode": "xml"})
            records.extend(parse_efetch_xml(resp.text))
        return records


def _xml_text(elem, path):
    found = elem.find(path)
    if found is None:
        return None
    return "".join(found.itertext()).strip() or None


def parse_efetch_xml(xml_text: str) -> List[CorpusRecord]:
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as e:
        raise DataError(f'Failed to parse efetch XML: {e}')
    records = []
    for article in root.findall(".//PubmedArticle"):
        pmid = _xml_text(article, ".//PMID")
        if not pmid:
            continue
        parts = []
        for section in article.findall(".//AbstractText"):
            text = "".join(section.itertext()).strip()
            if text:
                parts.append(text)
        if not parts:
            continue
        records.append(CorpusRecord(id=pmid,
                                    title=_xml_text(article, ".//ArticleTitle"),
                                    abstract=" ".join(parts)))
    return records
