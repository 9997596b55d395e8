"""Operator command-line interface.

Subcommands: ingest, poison, simulate, attribute, evaluate.  Exit codes:
0 success, 1 usage/config error, 2 provider failure.  All output files are
written atomically (temp file + rename); input corpora are never mutated
in place.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import attacks
from .attribution import MisgenerationEvent, attribute
from .corpus import atomic_write_text, ingest, load_store, save_store
from .errors import ProviderError, RagOriginError
from .evaluation import ExperimentConfig, run_experiment, run_rag, write_results
from .providers import make_bundle

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PROVIDER = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise _UsageError(message)


def _load_config(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise _UsageError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _settings(args, config):
    """Merge CLI flags over config-file defaults."""
    return {
        "metric": args.metric or config.get("metric", "cosine"),
        "k": args.k if args.k is not None else config.get("k", 5),
        "max_segments": (args.max_segments if args.max_segments is not None
                         else config.get("max_segments", 20)),
        "jobs": args.jobs,
        "seed": args.seed if args.seed is not None else config.get("seed", 0),
    }


def _providers(config):
    return make_bundle(config.get("providers", {}))


def _require_path(path, what):
    if not os.path.exists(path):
        raise _UsageError(f"{what} not found: {path}")


def cmd_ingest(args) -> int:
    config = _load_config(args.config)
    settings = _settings(args, config)
    _require_path(args.corpus, "corpus path")
    providers = _providers(config)
    kb = ingest(args.corpus, providers.embedder, metric=settings["metric"])
    save_store(kb, args.out)
    print(f"ingested {len(kb)} records -> {args.out}")
    return EXIT_OK


def cmd_poison(args) -> int:
    config = _load_config(args.config)
    _require_path(args.store, "store path")
    _require_path(args.attack, "attack spec path")
    providers = _providers(config)
    kb = load_store(args.store)
    spec = attacks.AttackSpec.from_file(args.attack)
    poisons = attacks.craft(spec)
    kb = attacks.inject(kb, poisons, providers.embedder)
    out = args.out or args.store
    save_store(kb, out)
    print(f"injected {len(poisons)} poisoned texts -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    settings = _settings(args, config)
    _require_path(args.store, "store path")
    providers = _providers(config)
    kb = load_store(args.store)
    answer = run_rag(args.question, kb, providers.embedder, providers.lm,
                     k=settings["k"])
    print(answer)
    return EXIT_OK


def cmd_attribute(args) -> int:
    config = _load_config(args.config)
    settings = _settings(args, config)
    _require_path(args.store, "store path")
    _require_path(args.event, "event file")
    providers = _providers(config)
    kb = load_store(args.store)
    with open(args.event, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        event = MisgenerationEvent(
            question=obj["question"],
            incorrect_response=obj["incorrect_response"],
            event_id=obj.get("event_id", "event"),
        )
    except (KeyError, ValueError) as exc:
        raise _UsageError(f"invalid event file {args.event}: {exc}") from exc
    report = attribute(event, kb, providers, k=settings["k"],
                       max_segments=settings["max_segments"],
                       jobs=settings["jobs"])
    atomic_write_text(args.out, report.to_json())
    print(f"flagged {len(report.flagged_ids)} of "
          f"{len(report.flagged_ids) + len(report.benign_ids)} scope texts "
          f"-> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require_path(args.experiment, "experiment config")
    config = ExperimentConfig.from_file(args.experiment)
    report = run_experiment(config)
    csv_path, json_path = write_results(report, config.output_dir)
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="ragorigin",
                     description="Knowledge-base poisoning forensics toolkit")
    parser.add_argument("--config", help="provider/settings config JSON")
    parser.add_argument("--jobs", type=int, default=1,
                        help="max concurrent provider calls per event")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--metric", choices=["cosine", "dot"], default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--max-segments", dest="max_segments", type=int,
                        default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="embed a JSONL corpus into a store")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("poison", help="craft and inject poisons from a spec")
    p.add_argument("--store", required=True)
    p.add_argument("--attack", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser("simulate", help="print the simulated RAG answer")
    p.add_argument("--store", required=True)
    p.add_argument("--question", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attribute", help="attribute a misgeneration event")
    p.add_argument("--store", required=True)
    p.add_argument("--event", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("evaluate", help="run a full experiment config")
    p.add_argument("--experiment", required=True)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (RagOriginError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
