# Memforge configuration
#
# Defaults <- flat JSON config file <- command line flags.  Secrets never live here; API keys come
# from the environment when a client is constructed.

from __future__ import annotations
from typing import Dict, FrozenSet, Mapping, Optional
import json
import logging

from pydantic import ValidationError

from corpus import normalize_text
from errors import ConfigError
from graphstore import normalize_synonyms
from models import *

logger = logging.getLogger(__name__)


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    where = ".".join(str(p) for p in err["loc"]) or "config"
    return f'{where}: {err["msg"]}'


def load_config(path: Optional[str] = None, overrides: Optional[Mapping] = None) -> PipelineConfig:
    """
    Resolve the pipeline configuration.  overrides with value None are ignored so that unset
    command line flags do not mask the file.
    """
    doc = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f'config file {path} not found')
        except ValueError as e:
            raise ConfigError(f'config file {path} is not valid JSON: {e}')
        if not isinstance(doc, dict):
            raise ConfigError(f'config file {path} must hold a JSON object')
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return PipelineConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(_first_error(e))


def dump_config(config: PipelineConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def load_lexicon(path: Optional[str]) -> FrozenSet[str]:
    """
    One disease name per line; blank lines and # comments are skipped, names are normalized.
    """
    if not path:
        return frozenset()
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise ConfigError(f'disease lexicon {path} not found')
    names = set()
    for line in lines:
        line = line.split("#", 1)[0]
        name = normalize_text(line)
        if name:
            names.add(name)
    logger.info("Loaded %d disease names from %s", len(names), path)
    return frozenset(names)


def load_synonyms(path: Optional[str]) -> Dict[str, str]:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            table = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f'synonym table {path} not found')
    except ValueError as e:
        raise ConfigError(f'synonym table {path} is not valid JSON: {e}')
    if not isinstance(table, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in table.items()):
        raise ConfigError(f'synonym table {path} must be a JSON object of strings')
    return normalize_synonyms(table)
