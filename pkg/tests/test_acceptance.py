"""Acceptance suite: one test per release criterion, each printing a
single pass line (run with ``pytest -s`` to see them)."""

import json
import math
import time

import numpy as np
import pytest

from ragorigin import (
    MisgenerationEvent,
    attribute,
    fuse_scores,
    is_poisoning_event,
    narrow_scope,
    split_scores,
    zscore_normalize,
    synth,
)
from ragorigin.attacks import (
    POISON_ID_PREFIX,
    AttackSpec,
    craft_prefix_poison,
    inject,
)
from ragorigin.attribution import ResponsibilityRecord
from ragorigin.cli import EXIT_OK, main
from ragorigin.evaluation import (
    AsrOutcome,
    EvalOutcome,
    collect_events,
    run_attack_round,
)
from ragorigin.providers import MockJudge, MockLanguageModel, make_bundle

from conftest import ScriptedJudge, build_kb


def _passline(n, detail):
    print(f"\ncriterion {n}: PASS ({detail})")


@pytest.fixture(scope="module")
def bench_full():
    bench = synth.make_benchmark(n_benign=1000, n_questions=20,
                                 poisons_per_target=5, seed=0)
    providers = make_bundle(bench.provider_config())
    kb = build_kb(bench.benign_records, providers.embedder)
    return bench, kb, providers


def test_criterion_1_end_to_end_attribution(bench_full):
    """1,000 benign texts, 20 targets, 5 poisons each: every flagged set
    equals its ground-truth poison set, under a 60 s single-thread budget."""
    bench, base_kb, providers = bench_full
    start = time.monotonic()

    kb = base_kb
    truth = []
    for target in bench.targets:
        poisons = craft_prefix_poison(AttackSpec(
            kind="prefix_poison",
            target_question=target.question,
            target_answer=target.target_answer,
            count=5,
            misleading_statements=target.misleading_statements,
        ))
        kb = inject(kb, poisons, providers.embedder)
        truth.append({POISON_ID_PREFIX + p.record.id for p in poisons})

    events = collect_events(bench.targets, kb, providers, k=5)
    assert len(events) == 20

    tp = tn = fp = fn = 0
    for event in events:
        idx = int(event.event_id.rsplit("-", 1)[1])
        report = attribute(event, kb, providers, k=5, jobs=1)
        assert report.flagged_ids == truth[idx]
        tp += len(report.flagged_ids & truth[idx])
        fp += len(report.flagged_ids - truth[idx])
        fn += len(truth[idx] - report.flagged_ids)
        tn += len(report.benign_ids - truth[idx])

    outcome = EvalOutcome.from_counts(tp, tn, fp, fn)
    assert outcome.dacc == 1.0
    assert outcome.fpr == 0.0
    assert outcome.fnr == 0.0
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    _passline(1, f"20/20 events exact, dacc=1.0 fpr=0.0 fnr=0.0, {elapsed:.1f}s")


def test_criterion_2_removal_neutralizes_every_attack():
    """Deleting the flagged texts drives attack success to exactly zero for
    all five attack kinds."""
    bench = synth.make_benchmark(n_benign=300, n_questions=6, seed=0)
    providers = make_bundle(bench.provider_config())
    kb = build_kb(bench.benign_records, providers.embedder)
    kinds = ("prefix_poison", "prompt_injection", "jamming",
             "perturb_benign", "perturb_cross")
    for kind in kinds:
        row, _ = run_attack_round(kind, kb, bench.targets, providers,
                                  k=5, max_segments=20, count=5, seed=0)
        assert row.asr_before == 1.0, kind
        assert row.asr_after == 0.0, kind
    _passline(2, "asr_after == 0.0 for all 5 attack kinds")


def test_criterion_3_perturbation_robustness(bench_full):
    """Benign-text and cross-poison perturbations of criterion 1 keep
    detection accuracy >= 0.98 with zero missed poisons."""
    bench, kb, providers = bench_full
    for kind in ("perturb_benign", "perturb_cross"):
        row, _ = run_attack_round(kind, kb, bench.targets, providers,
                                  k=5, max_segments=20, count=5, seed=0)
        assert row.outcome.dacc >= 0.98, kind
        assert row.outcome.fnr == 0.0, kind
    _passline(3, "both perturbation variants: dacc >= 0.98, fnr == 0.0")


def test_criterion_4_stopping_rule_matches_reference():
    """narrow_scope agrees with an independent simulator of the half-match
    stopping rule on 1,000 random judge scripts."""
    from ragorigin.corpus import TextRecord
    from ragorigin.providers import MockEmbedder

    def reference(verdicts, cap):
        matches = 0
        for i, verdict in enumerate(verdicts, start=1):
            matches += int(verdict)
            if 2 * matches <= i:
                return i
            if i == len(verdicts):
                return i
            if i == cap:
                return i
        raise AssertionError

    embedder = MockEmbedder(dim=512, seed=0)
    lm = MockLanguageModel(default_answer="whatever")
    kbs = {}
    for length in range(1, 41):
        records = [TextRecord(f"r{i:02d}", f"tok{i}a tok{i}b")
                   for i in range(length)]
        kbs[length] = build_kb(records, embedder)

    rng = np.random.default_rng(4)
    event = MisgenerationEvent("tok0a", "bad answer", "e")
    for _ in range(1000):
        length = int(rng.integers(1, 41))
        verdicts = [bool(b) for b in rng.integers(0, 2, size=length)]
        scope = narrow_scope(event, kbs[length], embedder, lm,
                             ScriptedJudge(verdicts), k=1, max_segments=40)
        assert len(scope.segments) == reference(verdicts, 40)
    _passline(4, "1000/1000 scripted sequences match the reference rule")


def test_criterion_5_split_matches_brute_force():
    """split_scores equals exhaustive threshold-partition search minimizing
    within-cluster SSE on 500 random score vectors."""

    def brute_force(scores):
        pairs = sorted(zip(scores, range(len(scores))))
        best = None
        for cut in range(1, len(scores)):
            if pairs[cut][0] <= pairs[cut - 1][0]:
                continue
            low = [p[0] for p in pairs[:cut]]
            high = [p[0] for p in pairs[cut:]]
            sse = sum((v - sum(low) / len(low)) ** 2 for v in low)
            sse += sum((v - sum(high) / len(high)) ** 2 for v in high)
            if best is None or sse < best[0]:
                best = (sse, cut)
        if best is None:
            return set()
        return {f"t{pairs[i][1]}" for i in range(best[1], len(scores))}

    rng = np.random.default_rng(5)
    for _ in range(500):
        n = int(rng.integers(1, 13))
        scores = list(rng.uniform(size=n))
        records = [ResponsibilityRecord(f"t{i}", 0, 0, 0, 0, 0, 0, s)
                   for i, s in enumerate(scores)]
        flagged, *_ = split_scores(records)
        assert flagged == brute_force(scores)
    _passline(5, "500/500 random vectors match exhaustive search")


def test_criterion_6_zscore_properties_and_affine_invariance():
    """Z-columns are standardized to machine precision; flagging is
    invariant under positive affine transforms of any raw signal column."""
    rng = np.random.default_rng(6)
    for _ in range(200):
        n = int(rng.integers(2, 13))
        cols = [list(rng.normal(size=n) * rng.uniform(0.1, 10)) for _ in range(3)]
        ids = [f"t{i}" for i in range(n)]

        for col in cols:
            z, degenerate = zscore_normalize(col)
            if degenerate:
                assert z == [0.0] * n
            else:
                z = np.array(z)
                assert abs(z.mean()) < 1e-9
                assert abs(z.std() - 1.0) < 1e-9

        base_flagged, *_ = split_scores(fuse_scores(ids, *cols))
        which = int(rng.integers(0, 3))
        a = float(rng.uniform(0.1, 5.0))
        b = float(rng.normal())
        transformed = [
            [a * v + b for v in col] if j == which else col
            for j, col in enumerate(cols)
        ]
        flagged, *_ = split_scores(fuse_scores(ids, *transformed))
        assert flagged == base_flagged
    _passline(6, "200/200 fixtures: z standardized, flagging affine-invariant")


def test_criterion_7_metric_identities():
    """DACC/FPR/FNR/ASR formulas hold, including zero-denominator
    conventions, over 10,000 random confusion counts."""
    rng = np.random.default_rng(7)
    for _ in range(10000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 50, size=4))
        if tp + tn + fp + fn == 0:
            continue
        o = EvalOutcome.from_counts(tp, tn, fp, fn)
        assert o.dacc == (tp + tn) / (tp + tn + fp + fn)
        assert o.fpr == (fp / (fp + tn) if fp + tn else 0.0)
        assert o.fnr == (fn / (fn + tp) if fn + tp else 0.0)
        assert o.undefined_fpr == (fp + tn == 0)
        assert o.undefined_fnr == (fn + tp == 0)
        total = int(rng.integers(1, 200))
        matched = int(rng.integers(0, total + 1))
        assert AsrOutcome(matched, total).asr == matched / total
    _passline(7, "10000 random confusion counts satisfy the identities")


def test_criterion_8_non_poisoning_triage():
    """Of 100 reported events, the 97 whose responses the model reproduces
    without any context are triaged as non-poisoning; the other 3 are not."""
    answers = {f"question {i}": f"direct answer {i}" for i in range(100)}
    lm = MockLanguageModel(answers=answers, default_answer="no idea")
    judge = MockJudge()
    mismatched = {12, 47, 88}
    not_poisoning = set()
    for i in range(100):
        response = (f"totally different claim {i}" if i in mismatched
                    else f"direct answer {i}")
        event = MisgenerationEvent(f"question {i}", response, f"tri-{i:03d}")
        if not is_poisoning_event(event, lm, judge):
            not_poisoning.add(i)
    assert not_poisoning == set(range(100)) - mismatched
    assert len(not_poisoning) == 97
    _passline(8, "exactly 97/100 events triaged as non-poisoning")


def test_criterion_9_evaluate_determinism(tmp_path):
    """Two CLI evaluate runs with identical config produce byte-identical
    results.json."""
    bench = synth.make_benchmark(n_benign=120, n_questions=3, seed=0)
    corpus = tmp_path / "corpus.jsonl"
    bench.write_corpus(corpus)
    experiment = tmp_path / "experiment.json"
    experiment.write_text(json.dumps({
        "corpus": "corpus.jsonl",
        "targets": [
            {
                "question": t.question,
                "target_answer": t.target_answer,
                "misleading_statements": list(t.misleading_statements),
            }
            for t in bench.targets
        ],
        "attacks": ["prefix_poison", "jamming"],
        "providers": bench.provider_config(),
        "seed": 0,
        "output_dir": "results",
    }), encoding="utf-8")

    results = tmp_path / "results" / "results.json"
    assert main(["evaluate", "--experiment", str(experiment)]) == EXIT_OK
    first = results.read_bytes()
    assert main(["evaluate", "--experiment", str(experiment)]) == EXIT_OK
    second = results.read_bytes()
    assert first == second
    _passline(9, "results.json byte-identical across runs")
