"""Deterministic synthetic benchmark fixtures.

Builds a desk-scale corpus plus attack targets whose vocabularies are
engineered against the mock embedder: no token outside a target question
ever shares a hash bucket with that question's tokens, so every similarity
the ranking sees is exact signal (question-bearing poisons rank first,
everything else sits at similarity zero).  That makes fixture outcomes
hand-checkable and stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .attacks import REFUSAL_ANSWER, _INJECTION_TEMPLATE
from .corpus import TextRecord, atomic_write_text
from .evaluation import TargetQuestion
from .providers import MockEmbedder, tokenize

DEFAULT_ANSWER = "I do not have that information."


@dataclass
class SynthBenchmark:
    benign_records: list[TextRecord]
    targets: list[TargetQuestion]
    correct_answers: dict[str, str]  # question -> truthful answer
    lm_rules: list[dict]
    lm_answers: dict[str, str]
    embedder_dim: int
    embedder_seed: int

    def provider_config(self) -> dict:
        """Provider bundle config wired with this benchmark's rule tables."""
        return {
            "embedder": {"kind": "mock", "dim": self.embedder_dim,
                         "seed": self.embedder_seed},
            "lm": {
                "kind": "mock",
                "seed": self.embedder_seed,
                "rules": self.lm_rules,
                "answers": self.lm_answers,
                "default_answer": DEFAULT_ANSWER,
            },
            "judge": {"kind": "mock"},
        }

    def write_corpus(self, path) -> None:
        lines = [
            json.dumps(
                {
                    "id": rec.id,
                    "content": rec.content,
                    "source_tag": rec.source_tag,
                    "truth_label": rec.truth_label,
                },
                sort_keys=True,
            )
            for rec in self.benign_records
        ]
        atomic_write_text(path, "\n".join(lines) + "\n")


class _Vocab:
    """Hands out token variants whose embedder buckets avoid a reserved set."""

    def __init__(self, embedder: MockEmbedder):
        self._embedder = embedder
        self.question_buckets: set[int] = set()

    def _bucket(self, token: str) -> int:
        return self._embedder._bucket(token)

    def question_token(self, base: str, forbidden: set[int]) -> str:
        # question tokens get globally unique buckets, clear of the fixed
        # attack-template vocabulary
        token, n = base, 0
        while self._bucket(token) in forbidden or self._bucket(token) in self.question_buckets:
            token = f"{base}x{n}"
            n += 1
        self.question_buckets.add(self._bucket(token))
        return token

    def other_token(self, base: str) -> str:
        # everything else only needs to stay out of the question buckets
        token, n = base, 0
        while self._bucket(token) in self.question_buckets:
            token = f"{base}x{n}"
            n += 1
        return token


def make_benchmark(n_benign: int = 1000, n_questions: int = 20,
                   poisons_per_target: int = 5, seed: int = 0,
                   vocab_size: int = 400, dim: int = 1024) -> SynthBenchmark:
    """Benign corpus + attack targets + mock language-model tables."""
    embedder = MockEmbedder(dim=dim, seed=seed)
    vocab = _Vocab(embedder)

    # tokens every injection/jamming poison carries, regardless of target
    fixed_tokens = set(tokenize(_INJECTION_TEMPLATE) + tokenize(REFUSAL_ANSWER))
    fixed_buckets = {vocab._bucket(t) for t in fixed_tokens}

    # reserve question buckets first
    question_tokens = [
        [vocab.question_token(f"{base}{j}", fixed_buckets)
         for base in ("question", "alpha", "beta", "gamma")]
        for j in range(n_questions)
    ]

    targets = []
    correct = {}
    rules = []
    answers = {}
    for j in range(n_questions):
        q_toks = question_tokens[j]
        question = " ".join(q_toks)
        target_answer = " ".join(
            vocab.other_token(b) for b in (f"target{j}", f"omega{j}"))
        correct_answer = f"truth{j} delta{j}"
        evidence = vocab.other_token(f"evidence{j}")
        statements = tuple(
            f"{target_answer} {evidence} {vocab.other_token(f'note{j}v{n}')}"
            for n in range(poisons_per_target)
        )
        cross_q = " ".join(
            vocab.other_token(b)
            for b in (f"crossquery{j}", f"crosstopic{j}", f"crossitem{j}"))
        cross_a = " ".join(
            vocab.other_token(b) for b in (f"crossanswer{j}", f"crossmark{j}"))
        cross_statements = tuple(
            f"{cross_a} {vocab.other_token(f'crossnote{j}v{n}')}"
            for n in range(poisons_per_target)
        )
        targets.append(TargetQuestion(
            question=question,
            target_answer=target_answer,
            misleading_statements=statements,
            paraphrase=" ".join(q_toks[1:]),
            cross_question=cross_q,
            cross_answer=cross_a,
            cross_statements=cross_statements,
        ))
        correct[question] = correct_answer
        rules.append({"trigger": target_answer, "answer": target_answer})
        answers[question] = correct_answer
    # availability attacks share one fixed refusal answer
    rules.append({"trigger": REFUSAL_ANSWER, "answer": REFUSAL_ANSWER})

    filler = []
    k = 0
    while len(filler) < vocab_size:
        filler.append(vocab.other_token(f"filler{k}"))
        k += 1

    rng = np.random.default_rng(seed)
    benign = []
    for i in range(n_benign):
        words = rng.integers(0, vocab_size, size=8)
        content = " ".join(filler[w] for w in words)
        benign.append(TextRecord(
            id=f"benign-{i:05d}",
            content=content,
            source_tag="synth",
            truth_label="benign",
        ))

    return SynthBenchmark(
        benign_records=benign,
        targets=targets,
        correct_answers=correct,
        lm_rules=rules,
        lm_answers=answers,
        embedder_dim=dim,
        embedder_seed=seed,
    )
