"""Core attribution engine.

Given a misgeneration event (question, incorrect response), the engine
narrows the candidate set to a similarity-ranked scope, scores each
candidate on three signals (embedding similarity, semantic correlation,
generation influence), fuses them into a responsibility score via z-score
normalization, and separates poisoned from benign candidates with an exact
one-dimensional two-cluster split.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import KnowledgeBase, similarity
from .errors import AttributionError, RagOriginError
from .providers import (
    Embedder,
    Judge,
    LanguageModel,
    ProviderBundle,
    prompt1_prefix,
    prompt2_prefix,
    render_direct_query,
    render_rag_answer,
)

REPORT_SCHEMA = "ragorigin-report/1"

DEFAULT_K = 5
DEFAULT_MAX_SEGMENTS = 20

_DEGENERATE_STD = 1e-12
_DEGENERATE_SPREAD = 1e-9


@dataclass(frozen=True)
class MisgenerationEvent:
    question: str
    incorrect_response: str
    event_id: str = "event"

    def __post_init__(self):
        if not self.question:
            raise ValueError("event question must be non-empty")
        if not self.incorrect_response:
            raise ValueError("event incorrect_response must be non-empty")


@dataclass(frozen=True)
class ScopeSegment:
    index: int  # 1-based
    member_ids: tuple[str, ...]
    generated_response: str
    matched: bool


@dataclass(frozen=True)
class AttributionScope:
    segments: tuple[ScopeSegment, ...]
    member_ids: tuple[str, ...]
    stop_reason: str  # "half_rule" | "corpus_exhausted" | "segment_cap"


@dataclass(frozen=True)
class ResponsibilityRecord:
    id: str
    es: float
    sc: float
    gc: float
    es_z: float
    sc_z: float
    gc_z: float
    rs: float


@dataclass(frozen=True)
class AttributionReport:
    event_id: str
    flagged_ids: frozenset[str]
    benign_ids: frozenset[str]
    records: tuple[ResponsibilityRecord, ...]
    cluster_means: tuple[float, float]  # (poisoned_mean, benign_mean)
    degenerate: bool
    scope: AttributionScope

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "event_id": self.event_id,
            "flagged_ids": sorted(self.flagged_ids),
            "benign_ids": sorted(self.benign_ids),
            "degenerate": self.degenerate,
            "stop_reason": self.scope.stop_reason,
            "segments": [
                {
                    "index": seg.index,
                    "member_ids": list(seg.member_ids),
                    "generated_response": seg.generated_response,
                    "matched": seg.matched,
                }
                for seg in self.scope.segments
            ],
            "records": [
                {
                    "id": rec.id,
                    "es": rec.es,
                    "sc": rec.sc,
                    "gc": rec.gc,
                    "es_z": rec.es_z,
                    "sc_z": rec.sc_z,
                    "gc_z": rec.gc_z,
                    "rs": rec.rs,
                }
                for rec in self.records
            ],
            "cluster_means": list(self.cluster_means),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# -- scope narrowing -----------------------------------------------------


def narrow_scope(event: MisgenerationEvent, kb: KnowledgeBase,
                 embedder: Embedder, lm: LanguageModel, judge: Judge,
                 k: int = DEFAULT_K,
                 max_segments: int = DEFAULT_MAX_SEGMENTS) -> AttributionScope:
    """Grow the candidate scope one K-sized rank segment at a time.

    Each segment's members are fed as RAG context; a judge decides whether
    the generated response reproduces the incorrect response.  Growth stops
    at the smallest segment count i with 2*matches <= i ("at least half of
    the tested segments do not cause the misgeneration"), at corpus
    exhaustion, or at the segment cap.  Segment 1 is always kept.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_segments < 1:
        raise ValueError("max_segments must be >= 1")
    if len(kb) == 0:
        raise AttributionError("narrow_scope", "knowledge base is empty")

    segments: list[ScopeSegment] = []
    try:
        ranked = kb.rank_all(embedder.embed(event.question))
        matches = 0
        stop_reason = "corpus_exhausted"
        for i in range(1, max_segments + 1):
            members = ranked[(i - 1) * k: i * k]
            if not members:
                stop_reason = "corpus_exhausted"
                break
            contexts = [kb.content(rid) for rid in members]
            response = lm.generate(render_rag_answer(contexts, event.question))
            matched = judge.matches(response, event.incorrect_response, event.question)
            matches += int(matched)
            segments.append(ScopeSegment(i, tuple(members), response, matched))
            if 2 * matches <= i:
                stop_reason = "half_rule"
                break
            if i * k >= len(ranked):
                stop_reason = "corpus_exhausted"
                break
        else:
            stop_reason = "segment_cap"
    except RagOriginError:
        raise
    except Exception as exc:
        raise AttributionError("narrow_scope", str(exc), partial_segments=segments) from exc

    member_ids = tuple(rid for seg in segments for rid in seg.member_ids)
    return AttributionScope(tuple(segments), member_ids, stop_reason)


# -- signals -------------------------------------------------------------


def embedding_similarity(q_vec, u_vec, metric: str = "cosine") -> float:
    return similarity(q_vec, u_vec, metric)


def semantic_correlation(lm: LanguageModel, text: str, question: str) -> float:
    """Mean log-prob of the question span given the text as context."""
    return lm.score_continuation(prompt1_prefix(text), question).mean_log_prob


def generation_influence(lm: LanguageModel, text: str, question: str,
                         response: str) -> float:
    """Mean log-prob of the incorrect-response span given text + question."""
    return lm.score_continuation(prompt2_prefix(text, question), response).mean_log_prob


def zscore_normalize(values) -> tuple[list[float], bool]:
    """Population z-scores; a spread below 1e-12 yields all zeros plus a
    degenerate flag."""
    arr = np.asarray(values, dtype=float)
    if arr.size < 1:
        raise ValueError("need at least one value")
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    std = float(arr.std())  # population (divide by N)
    if std < _DEGENERATE_STD:
        return [0.0] * arr.size, True
    z = (arr - arr.mean()) / std
    return [float(v) for v in z], False


def fuse_scores(ids: Sequence[str], es: Sequence[float], sc: Sequence[float],
                gc: Sequence[float]) -> list[ResponsibilityRecord]:
    """Z-normalize each raw column across the scope and average them."""
    if not (len(ids) == len(es) == len(sc) == len(gc)):
        raise ValueError("column lengths differ")
    es_z, _ = zscore_normalize(es)
    sc_z, _ = zscore_normalize(sc)
    gc_z, _ = zscore_normalize(gc)
    records = []
    for i, rid in enumerate(ids):
        rs = (es_z[i] + sc_z[i] + gc_z[i]) / 3.0
        records.append(ResponsibilityRecord(
            id=rid, es=float(es[i]), sc=float(sc[i]), gc=float(gc[i]),
            es_z=es_z[i], sc_z=sc_z[i], gc_z=gc_z[i], rs=rs,
        ))
    return records


def responsibility_scores(scope: AttributionScope, kb: KnowledgeBase,
                          embedder: Embedder, lm: LanguageModel,
                          event: MisgenerationEvent,
                          jobs: int = 1) -> list[ResponsibilityRecord]:
    """Compute ES/SC/GC per scope member and fuse into responsibility scores.

    Per-text work may run concurrently; results are reduced in scope order
    so output is independent of scheduling.
    """
    if not scope.member_ids:
        raise AttributionError("responsibility_scores", "scope is empty")
    q_vec = embedder.embed(event.question)

    def score_one(rid: str) -> tuple[float, float, float]:
        text = kb.content(rid)
        es = embedding_similarity(q_vec, kb.vector(rid), kb.metric)
        sc = semantic_correlation(lm, text, event.question)
        gc = generation_influence(lm, text, event.question, event.incorrect_response)
        return es, sc, gc

    try:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                triples = list(pool.map(score_one, scope.member_ids))
        else:
            triples = [score_one(rid) for rid in scope.member_ids]
    except RagOriginError:
        raise
    except Exception as exc:
        raise AttributionError("responsibility_scores", str(exc)) from exc

    es_col = [t[0] for t in triples]
    sc_col = [t[1] for t in triples]
    gc_col = [t[2] for t in triples]
    return fuse_scores(list(scope.member_ids), es_col, sc_col, gc_col)


# -- threshold determination --------------------------------------------


def split_scores(records: Sequence[ResponsibilityRecord]):
    """Exact 1-D 2-means on responsibility scores.

    Scans every threshold boundary of the sorted scores, minimizing total
    within-cluster sum of squared deviations (equivalent to the k=2 k-means
    optimum in one dimension).  The higher-mean cluster is flagged.  A
    spread below 1e-9 flags nothing and reports a degenerate split.

    Returns (flagged_ids, benign_ids, (poisoned_mean, benign_mean), degenerate).
    """
    if not records:
        raise ValueError("need at least one record")
    ids = [rec.id for rec in records]
    rs = np.array([rec.rs for rec in records], dtype=float)

    if float(rs.max() - rs.min()) < _DEGENERATE_SPREAD:
        mean = float(rs.mean())
        return frozenset(), frozenset(ids), (mean, mean), True

    order = np.lexsort((np.array(ids), rs))  # ascending score, id tiebreak
    sorted_rs = rs[order]
    n = sorted_rs.size
    csum = np.cumsum(sorted_rs)
    csq = np.cumsum(sorted_rs ** 2)
    total_sum, total_sq = csum[-1], csq[-1]

    best_sse = None
    best_k = None
    for k in range(1, n):
        if sorted_rs[k] <= sorted_rs[k - 1]:
            continue  # only genuine threshold boundaries
        low_sse = csq[k - 1] - csum[k - 1] ** 2 / k
        hi_sum = total_sum - csum[k - 1]
        hi_sse = (total_sq - csq[k - 1]) - hi_sum ** 2 / (n - k)
        sse = low_sse + hi_sse
        if best_sse is None or sse < best_sse:
            best_sse = sse
            best_k = k

    low_idx = order[:best_k]
    high_idx = order[best_k:]
    flagged = frozenset(ids[i] for i in high_idx)
    benign = frozenset(ids[i] for i in low_idx)
    poisoned_mean = float(rs[high_idx].mean())
    benign_mean = float(rs[low_idx].mean())
    return flagged, benign, (poisoned_mean, benign_mean), False


# -- end-to-end ----------------------------------------------------------


def attribute(event: MisgenerationEvent, kb: KnowledgeBase,
              providers: ProviderBundle, k: int = DEFAULT_K,
              max_segments: int = DEFAULT_MAX_SEGMENTS,
              jobs: int = 1) -> AttributionReport:
    """Full pipeline: narrow scope, score responsibility, split clusters."""
    scope = narrow_scope(event, kb, providers.embedder, providers.lm,
                         providers.judge, k=k, max_segments=max_segments)
    records = responsibility_scores(scope, kb, providers.embedder,
                                    providers.lm, event, jobs=jobs)
    flagged, benign, cluster_means, degenerate = split_scores(records)
    return AttributionReport(
        event_id=event.event_id,
        flagged_ids=flagged,
        benign_ids=benign,
        records=tuple(records),
        cluster_means=cluster_means,
        degenerate=degenerate,
        scope=scope,
    )


def is_poisoning_event(event: MisgenerationEvent, lm: LanguageModel,
                       judge: Judge) -> bool:
    """Triage: query the model with the bare question; if its direct answer
    already matches the reported response, the misgeneration is inherent to
    the model, not the knowledge base."""
    direct = lm.generate(render_direct_query(event.question))
    return not judge.matches(direct, event.incorrect_response, event.question)
