"""Evaluation harness: simulated RAG pipeline, event collection, detection
metrics, reference baselines, and the end-to-end experiment runner."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import attacks
from .attribution import (
    AttributionReport,
    MisgenerationEvent,
    attribute,
)
from .corpus import KnowledgeBase, atomic_write_text, ingest
from .errors import RagOriginError
from .providers import ProviderBundle, make_bundle, render_rag_answer

RESULTS_SCHEMA = "ragorigin-results/1"


@dataclass(frozen=True)
class EvalOutcome:
    tp: int
    tn: int
    fp: int
    fn: int
    dacc: float
    fpr: float
    fnr: float
    undefined_fpr: bool = False
    undefined_fnr: bool = False

    @classmethod
    def from_counts(cls, tp: int, tn: int, fp: int, fn: int) -> "EvalOutcome":
        total = tp + tn + fp + fn
        if total == 0:
            raise ValueError("confusion counts sum to zero")
        undefined_fpr = (fp + tn) == 0
        undefined_fnr = (fn + tp) == 0
        return cls(
            tp=tp, tn=tn, fp=fp, fn=fn,
            dacc=(tp + tn) / total,
            fpr=0.0 if undefined_fpr else fp / (fp + tn),
            fnr=0.0 if undefined_fnr else fn / (fn + tp),
            undefined_fpr=undefined_fpr,
            undefined_fnr=undefined_fnr,
        )


@dataclass(frozen=True)
class AsrOutcome:
    matched: int
    total: int

    @property
    def asr(self) -> float:
        return self.matched / self.total if self.total else 0.0


@dataclass(frozen=True)
class TargetQuestion:
    """One attack target: the question the attacker poisons, the answer they
    want the RAG system to emit, and optional fixture metadata."""

    question: str
    target_answer: str
    misleading_statements: tuple[str, ...] = ()
    paraphrase: Optional[str] = None
    # optional off-target payload used by the cross-perturbation attack
    cross_question: Optional[str] = None
    cross_answer: Optional[str] = None
    cross_statements: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "misleading_statements",
                           tuple(self.misleading_statements))
        object.__setattr__(self, "cross_statements",
                           tuple(self.cross_statements))

    @classmethod
    def from_dict(cls, obj: dict) -> "TargetQuestion":
        return cls(
            question=obj["question"],
            target_answer=obj["target_answer"],
            misleading_statements=tuple(obj.get("misleading_statements", [])),
            paraphrase=obj.get("paraphrase"),
            cross_question=obj.get("cross_question"),
            cross_answer=obj.get("cross_answer"),
            cross_statements=tuple(obj.get("cross_statements", [])),
        )


def run_rag(question: str, kb: KnowledgeBase, embedder, lm, k: int = 5,
            retrieval_query: Optional[str] = None) -> str:
    """Simulated RAG answer: retrieve top-k, then generate with the
    retrieved texts as context.  ``retrieval_query`` substitutes a
    paraphrase for retrieval while the generation prompt keeps the original
    question."""
    q_vec = embedder.embed(retrieval_query or question)
    top = kb.retrieve_top_k(q_vec, k)
    contexts = [kb.content(rid) for rid, _score in top]
    return lm.generate(render_rag_answer(contexts, question))


def collect_events(targets: Sequence[TargetQuestion], kb: KnowledgeBase,
                   providers: ProviderBundle, k: int = 5,
                   use_paraphrase: bool = False,
                   event_prefix: str = "event") -> list[MisgenerationEvent]:
    """Query every target and keep the successful attacks: responses the
    judge confirms to convey the attacker's target answer."""
    events = []
    for i, target in enumerate(targets):
        question = target.question
        retrieval_query = None
        if use_paraphrase and target.paraphrase:
            retrieval_query = target.paraphrase
        response = run_rag(question, kb, providers.embedder, providers.lm, k,
                           retrieval_query=retrieval_query)
        if providers.judge.matches(response, target.target_answer, question):
            events.append(MisgenerationEvent(
                question=question,
                incorrect_response=response,
                event_id=f"{event_prefix}-{i:03d}",
            ))
    return events


def score_attribution(report: AttributionReport, kb: KnowledgeBase) -> EvalOutcome:
    """Confusion counts against ground-truth labels, over the attribution
    scope (flagged plus benign members)."""
    tp = tn = fp = fn = 0
    for rid in report.flagged_ids | report.benign_ids:
        poisoned = kb.record(rid).truth_label == "poisoned"
        flagged = rid in report.flagged_ids
        if flagged and poisoned:
            tp += 1
        elif flagged and not poisoned:
            fp += 1
        elif not flagged and poisoned:
            fn += 1
        else:
            tn += 1
    return EvalOutcome.from_counts(tp, tn, fp, fn)


def compute_asr(questions: Sequence[str], responses: Sequence[str],
                target_answers: Sequence[str], judge) -> AsrOutcome:
    """Fraction of responses the judge matches to their target answers."""
    if not (len(questions) == len(responses) == len(target_answers)):
        raise ValueError("questions/responses/targets lengths differ")
    matched = sum(
        judge.matches(resp, tgt, q)
        for q, resp, tgt in zip(questions, responses, target_answers)
    )
    return AsrOutcome(matched=matched, total=len(responses))


# -- baselines -----------------------------------------------------------


def _benign_sample_ids(kb: KnowledgeBase, scope_ids, sample_size: int,
                       rng_seed: int) -> list[str]:
    # Reference population: everything outside the suspect scope.  Labels
    # are never consulted.
    scope = set(scope_ids)
    pool = [rid for rid in kb.ids if rid not in scope]
    if not pool:
        return []
    rng = np.random.default_rng(rng_seed)
    size = min(sample_size, len(pool))
    idx = rng.choice(len(pool), size=size, replace=False)
    return [pool[i] for i in sorted(idx)]


def baseline_norm(kb: KnowledgeBase, scope_ids: Sequence[str],
                  sample_size: int = 1000, rng_seed: int = 0) -> set[str]:
    """Flag scope members whose embedding L2 norm exceeds the max norm of a
    random reference sample.  With a unit-normalizing embedder every norm is
    identical, so this flags nothing (the known failure mode of the method)."""
    sample = _benign_sample_ids(kb, scope_ids, sample_size, rng_seed)
    if not sample:
        return set()
    threshold = max(float(np.linalg.norm(kb.vector(rid))) for rid in sample)
    return {
        rid for rid in scope_ids
        if float(np.linalg.norm(kb.vector(rid))) > threshold
    }


def perplexity(lm, text: str) -> float:
    """exp(-mean log-prob) of the text scored unconditionally."""
    return math.exp(-lm.score_continuation("", text).mean_log_prob)


def baseline_ppl(lm, kb: KnowledgeBase, scope_ids: Sequence[str],
                 sample_size: int = 1000, rng_seed: int = 0) -> set[str]:
    """Flag scope members whose perplexity exceeds the max perplexity of a
    random reference sample."""
    sample = _benign_sample_ids(kb, scope_ids, sample_size, rng_seed)
    if not sample:
        return set()
    threshold = max(perplexity(lm, kb.content(rid)) for rid in sample)
    return {rid for rid in scope_ids if perplexity(lm, kb.content(rid)) > threshold}


# -- experiment runner ---------------------------------------------------


@dataclass
class ExperimentConfig:
    corpus_path: str
    targets: list[TargetQuestion]
    attack_kinds: list[str]
    providers: dict = field(default_factory=dict)
    metric: str = "cosine"
    k: int = 5
    max_segments: int = 20
    count: int = 5  # poisons injected per target
    seed: int = 0
    output_dir: str = "."

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str = ".") -> "ExperimentConfig":
        return cls(
            corpus_path=os.path.join(base_dir, obj["corpus"]),
            targets=[TargetQuestion.from_dict(t) for t in obj["targets"]],
            attack_kinds=list(obj.get("attacks", ["prefix_poison"])),
            providers=obj.get("providers", {}),
            metric=obj.get("metric", "cosine"),
            k=obj.get("k", 5),
            max_segments=obj.get("max_segments", 20),
            count=obj.get("count", 5),
            seed=obj.get("seed", 0),
            output_dir=os.path.join(base_dir, obj.get("output_dir", ".")),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls.from_dict(obj, base_dir=os.path.dirname(os.path.abspath(path)))


@dataclass(frozen=True)
class ExperimentRow:
    attack: str
    outcome: EvalOutcome
    asr_before: float
    asr_after: float


@dataclass
class ExperimentReport:
    rows: list[ExperimentRow]
    reports: dict  # attack kind -> list of AttributionReport dicts

    def to_dict(self) -> dict:
        return {
            "schema": RESULTS_SCHEMA,
            "rows": [
                {
                    "attack": row.attack,
                    "tp": row.outcome.tp,
                    "tn": row.outcome.tn,
                    "fp": row.outcome.fp,
                    "fn": row.outcome.fn,
                    "dacc": row.outcome.dacc,
                    "fpr": row.outcome.fpr,
                    "fnr": row.outcome.fnr,
                    "asr_before": row.asr_before,
                    "asr_after": row.asr_after,
                }
                for row in self.rows
            ],
            "reports": self.reports,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["attack", "dacc", "fpr", "fnr", "asr_before", "asr_after"])
        for row in self.rows:
            writer.writerow([
                row.attack,
                f"{row.outcome.dacc:.4f}",
                f"{row.outcome.fpr:.4f}",
                f"{row.outcome.fnr:.4f}",
                f"{row.asr_before:.4f}",
                f"{row.asr_after:.4f}",
            ])
        return buf.getvalue()


def _cross_partner_spec(target: TargetQuestion, index: int,
                        count: int) -> attacks.AttackSpec:
    # Off-target poison used as cross-perturbation payload.  Targets may
    # supply their own partner; otherwise a synthetic one is derived whose
    # vocabulary stays clear of typical corpus tokens.
    if target.cross_question:
        return attacks.AttackSpec(
            kind="prefix_poison",
            target_question=target.cross_question,
            target_answer=target.cross_answer or "",
            count=count,
            misleading_statements=target.cross_statements,
        )
    return attacks.AttackSpec(
        kind="prefix_poison",
        target_question=f"crossquery{index} crosstopic{index} crossitem{index}",
        target_answer=f"crossanswer{index} crossmark{index}",
        count=count,
        misleading_statements=tuple(
            f"crossanswer{index} crossmark{index} crossnote{n}" for n in range(count)
        ),
    )


def craft_for_kind(kind: str, target: TargetQuestion, target_index: int,
                   count: int, kb: KnowledgeBase,
                   rng: np.random.Generator) -> list[attacks.PoisonedText]:
    """Crafted poisons for one target under the given attack kind."""
    base_spec = attacks.AttackSpec(
        kind="prefix_poison",
        target_question=target.question,
        target_answer=target.target_answer,
        count=count,
        misleading_statements=target.misleading_statements,
    )
    if kind == "prefix_poison":
        return attacks.craft_prefix_poison(base_spec)
    if kind == "prompt_injection":
        spec = attacks.AttackSpec(
            kind="prompt_injection",
            target_question=target.question,
            target_answer=target.target_answer,
            count=count,
        )
        return attacks.craft_prompt_injection(spec)
    if kind == "jamming":
        spec = attacks.AttackSpec(
            kind="jamming",
            target_question=target.question,
            target_answer=attacks.REFUSAL_ANSWER,
            count=count,
        )
        return attacks.craft_jamming(spec)
    if kind == "perturb_benign":
        base = attacks.craft_prefix_poison(base_spec)
        snippets = []
        for _ in base:
            rid = kb.ids[int(rng.integers(0, len(kb)))]
            words = kb.content(rid).split()
            snippets.append(" ".join(words[:12]) or kb.content(rid))
        return [attacks.perturb_with_benign(p, s) for p, s in zip(base, snippets)]
    if kind == "perturb_cross":
        base = attacks.craft_prefix_poison(base_spec)
        partners = attacks.craft_prefix_poison(
            _cross_partner_spec(target, target_index, count))
        return [attacks.perturb_with_cross(a, b) for a, b in zip(base, partners)]
    raise ValueError(f"unknown attack kind {kind!r}")


def run_attack_round(kind: str, base_kb: KnowledgeBase,
                     targets: Sequence[TargetQuestion],
                     providers: ProviderBundle, k: int, max_segments: int,
                     count: int, seed: int):
    """One poison/collect/attribute/remove cycle for a single attack kind.

    Returns (row, per-event report dicts).
    """
    rng = np.random.default_rng(seed)
    kb = base_kb
    for i, target in enumerate(targets):
        poisons = craft_for_kind(kind, target, i, count, base_kb, rng)
        kb = attacks.inject(kb, poisons, providers.embedder)

    if kind == "jamming":
        # denial-of-service attacks share one fixed refusal target
        targets = [replace(t, target_answer=attacks.REFUSAL_ANSWER) for t in targets]

    events = collect_events(targets, kb, providers, k, event_prefix=kind)
    asr_before = len(events) / len(targets) if targets else 0.0

    tp = tn = fp = fn = 0
    flagged_union: set[str] = set()
    report_dicts = []
    for event in events:
        report = attribute(event, kb, providers, k=k, max_segments=max_segments)
        outcome = score_attribution(report, kb)
        tp += outcome.tp
        tn += outcome.tn
        fp += outcome.fp
        fn += outcome.fn
        flagged_union |= set(report.flagged_ids)
        report_dicts.append(report.to_dict())

    cleaned = kb.remove_many(sorted(flagged_union))
    responses = [
        run_rag(t.question, cleaned, providers.embedder, providers.lm, k)
        for t in targets
    ]
    after = compute_asr(
        [t.question for t in targets], responses,
        [t.target_answer for t in targets],
        providers.judge,
    )

    if tp + tn + fp + fn == 0:
        outcome = EvalOutcome(0, 0, 0, 0, 0.0, 0.0, 0.0, True, True)
    else:
        outcome = EvalOutcome.from_counts(tp, tn, fp, fn)
    row = ExperimentRow(attack=kind, outcome=outcome,
                        asr_before=asr_before, asr_after=after.asr)
    return row, report_dicts


def run_experiment(config: ExperimentConfig,
                   providers: Optional[ProviderBundle] = None) -> ExperimentReport:
    """Full experiment: for every configured attack kind, poison the corpus,
    collect misgeneration events, attribute them, score against ground
    truth, remove flagged texts, and measure the residual attack success
    rate."""
    if providers is None:
        providers = make_bundle(config.providers)
    base_kb = ingest(config.corpus_path, providers.embedder, metric=config.metric)

    rows = []
    reports = {}
    for kind in config.attack_kinds:
        row, report_dicts = run_attack_round(
            kind, base_kb, config.targets, providers,
            config.k, config.max_segments, config.count, config.seed)
        rows.append(row)
        reports[kind] = report_dicts
    return ExperimentReport(rows=rows, reports=reports)


def write_results(report: ExperimentReport, output_dir) -> tuple[str, str]:
    """Write results.csv and results.json atomically; returns their paths."""
    os.makedirs(output_dir, exist_ok=True)
    csv_path = os.path.join(output_dir, "results.csv")
    json_path = os.path.join(output_dir, "results.json")
    atomic_write_text(csv_path, report.to_csv())
    atomic_write_text(json_path,
                      json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return csv_path, json_path
