# Memforge command line
#
#   build         corpus or seed query -> LTM snapshot
#   activate      snapshot + query -> working-memory activation report
#   eval          planted-fact recall sweep over token caps, as CSV
#   stats         snapshot summary, or feature subgraphs with --feature
#   export-bank   snapshot -> memory bank file
#   print-config  resolved configuration
#   serve         HTTP activation service over a snapshot
#
# stdout carries only JSON or CSV; logs and errors go to stderr.

from __future__ import annotations
from typing import List, Optional
import argparse
import json
import logging
import os
import sys

import numpy as np

from activation import activate, activation_report, as_tokens, request_mask, tokens_from_text
from config import dump_config, load_config
from embedding import build_memory_bank, export_bank, load_matrix, make_embedder
from errors import ConfigError, DataError, MemforgeError, SnapshotNotFoundError
from evaluation import evaluate, to_csv
from graphstore import load_snapshot, save_snapshot
from models import *
from pipeline import build_ltm

logger = logging.getLogger(__name__)


# flag -> PipelineConfig key
CONFIG_FLAGS = (
    ("--tau",             "tau",             float),
    ("--alpha",           "alpha",           float),
    ("--penalty-f",       "penalty_f",       float),
    ("--dim",             "dim",             int),
    ("--epsilon",         "epsilon",         float),
    ("--cap-dynamic",     "cap_dynamic",     int),
    ("--cap-static",      "cap_static",      int),
    ("--relevance-floor", "relevance_floor", float),
    ("--max-depth",       "max_depth",       int),
    ("--query-budget",    "query_budget",    int),
    ("--retmax",          "retmax",          int),
    ("--disease-lexicon", "disease_lexicon", str),
    ("--synonym-table",   "synonym_table",   str),
    ("--extractor",       "extractor",       str),
    ("--llm-endpoint",    "llm_endpoint",    str),
    ("--workers",         "workers",         int),
)


def _emit(doc):
    sys.stdout.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f'expected comma separated integers, got {text!r}')


def resolve_config(args) -> PipelineConfig:
    overrides = {key: getattr(args, key) for _, key, _ in CONFIG_FLAGS}
    return load_config(args.config, overrides)


def read_tokens(path: str) -> np.ndarray:
    """
    a .npy array, or JSON {"tokens": [[...], ...]}
    """
    try:
        if path.endswith(".npy"):
            return as_tokens(np.load(path))
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise SnapshotNotFoundError(path)
    except ValueError as e:
        raise DataError(f'{path}: unreadable token matrix: {e}')
    if not isinstance(doc, dict) or "tokens" not in doc:
        raise DataError(f'{path}: expected an object with a "tokens" matrix')
    return as_tokens(doc["tokens"])


###
##  Subcommands
###

def cmd_build(args, config: PipelineConfig) -> int:
    graph, report = build_ltm(config,
                              corpus_path=args.corpus,
                              seed=args.seed_query,
                              base=args.base,
                              ledger_url=args.ledger)
    save_snapshot(graph, args.out)
    _emit(report.model_dump(mode="json"))
    return 0


def cmd_activate(args, config: PipelineConfig) -> int:
    graph = load_snapshot(args.snapshot)
    embedder = make_embedder(config)
    bank = build_memory_bank(graph, embedder)
    X = tokens_from_text(args.query, embedder) if args.query is not None else read_tokens(args.tokens)
    overrides = {"mask": request_mask(bank, graph, _int_list(args.exclude or ""), args.restrict_feature)}
    if args.projection_query:
        overrides["projection_query"] = load_matrix(args.projection_query)[0]
    if args.projection_memory:
        overrides["projection_memory"] = load_matrix(args.projection_memory)[0]
    result = activate(bank, X, config.activation_config(**overrides), ActivationMode(args.mode))
    _emit(activation_report(result, bank, graph, X).model_dump(mode="json"))
    return 0


def cmd_eval(args, config: PipelineConfig) -> int:
    rows = evaluate(config,
                    caps=_int_list(args.caps),
                    mode=ActivationMode(args.mode),
                    n_docs=args.docs,
                    n_planted=args.planted,
                    seed=args.seed,
                    noise=args.noise,
                    grid=args.grid)
    text = to_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_stats(args, config: PipelineConfig) -> int:
    graph = load_snapshot(args.snapshot)
    if args.feature:
        _emit(graph.subgraph(args.feature).model_dump(mode="json"))
    else:
        _emit(graph.stats().model_dump(mode="json"))
    return 0


def cmd_export_bank(args, config: PipelineConfig) -> int:
    bank = build_memory_bank(load_snapshot(args.snapshot), make_embedder(config))
    export_bank(bank, args.out, args.format)
    _emit({"rows": bank.size, "dimension": bank.dimension, "built_from": bank.built_from, "path": args.out})
    return 0


def cmd_print_config(args, config: PipelineConfig) -> int:
    sys.stdout.write(dump_config(config))
    return 0


def cmd_serve(args, config: PipelineConfig) -> int:
    import uvicorn
    import main
    main.service.load(load_snapshot(args.snapshot), config)
    uvicorn.run(main.app, host=args.host, port=args.port, log_level="info" if args.verbose else "warning")
    return 0


###
##  Parser
###

def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config document")
    common.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    for flag, key, kind in CONFIG_FLAGS:
        common.add_argument(flag, dest=key, type=kind, default=None)

    parser = argparse.ArgumentParser(prog="memforge", description="Literature-grounded pathology memory engine.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common], help="build an LTM snapshot")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--corpus", help="JSON Lines corpus file")
    source.add_argument("--seed-query", help="literature search seed query")
    p.add_argument("--out", required=True, help="snapshot path to write")
    p.add_argument("--base", help="existing snapshot to extend")
    p.add_argument("--ledger", help="SQLAlchemy URL of the build ledger, e.g. sqlite:///memforge.db")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("activate", parents=[common], help="activate working memory for a query")
    p.add_argument("--snapshot", required=True)
    query = p.add_mutually_exclusive_group(required=True)
    query.add_argument("--query", help="query text, one token per sentence")
    query.add_argument("--tokens", help="token matrix, .npy or JSON")
    p.add_argument("--mode", choices=[m.value for m in ActivationMode], default=ActivationMode.fused.value)
    p.add_argument("--exclude", help="comma separated bank rows to suppress")
    p.add_argument("--restrict-feature", help="only activate edges touching this canonical id")
    p.add_argument("--projection-query", help="d x d query projection in bank export format")
    p.add_argument("--projection-memory", help="d x d memory projection in bank export format")
    p.set_defaults(func=cmd_activate)

    p = sub.add_parser("eval", parents=[common], help="planted-fact recall sweep")
    p.add_argument("--caps", default="1,2,3,4,5")
    p.add_argument("--grid", action="store_true", help="sweep every (cap_D, cap_S) pair, not just the diagonal")
    p.add_argument("--mode", choices=[m.value for m in ActivationMode], default=ActivationMode.fused.value)
    p.add_argument("--docs", type=int, default=50)
    p.add_argument("--planted", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", help="CSV path; stdout when absent")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", parents=[common], help="snapshot summary")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--feature", action="append", help="emit the subgraph of this feature instead (repeatable)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("export-bank", parents=[common], help="write the memory bank of a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["binary", "json"], default="binary")
    p.set_defaults(func=cmd_export_bank)

    p = sub.add_parser("print-config", parents=[common], help="print the resolved configuration")
    p.set_defaults(func=cmd_print_config)

    p = sub.add_parser("serve", parents=[common], help="serve activations over HTTP")
    p.add_argument("--snapshot", default=os.environ.get("MEMFORGE_SNAPSHOT"), required="MEMFORGE_SNAPSHOT" not in os.environ)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, resolve_config(args))
    except MemforgeError as e:
        sys.stderr.write(json.dumps(e.as_dict(), sort_keys=True) + "\n")
        return e.exit_code
    except Exception as e:
        logger.exception("internal error")
        sys.stderr.write(json.dumps({"error": "internal_error", "message": str(e), "exit_code": 5}, sort_keys=True) + "\n")
        return 5


if __name__ == "__main__":
    sys.exit(main())
