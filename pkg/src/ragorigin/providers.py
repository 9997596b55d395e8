"""Provider contracts: embedder, language model, judge.

Mock implementations are pure functions of their inputs (plus a seed) so
fixtures are reproducible across processes; HTTP implementations speak an
OpenAI-compatible protocol.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import httpx
import numpy as np

from .errors import CapabilityError, ProviderError

log = logging.getLogger(__name__)

API_KEY_ENV = "RAGORIGIN_API_KEY"

# -- prompt templates ----------------------------------------------------

TEMPLATE_IDS = ("prompt1", "prompt2", "rag_answer", "judge", "direct_query")

_PROMPT1_HEAD = (
    "Below is a query from a user and a relevant context. "
    "Answer the question given the information in the context.\n"
    "Context: [{u}]\n"
    "Query: ["
)
_RAG_ANSWER_HEAD = (
    "Below is a query from a user and relevant contexts. "
    "Answer the question given the information in the contexts.\n"
    "Contexts: {contexts}\n"
    "Query: ["
)
_JUDGE_TEMPLATE = (
    "Do the following two responses convey the same answer to the question? "
    "Question: [{q}] Response A: [{a}] Response B: [{b}] Reply YES or NO."
)


@dataclass(frozen=True)
class Prompt:
    rendered_text: str
    template_id: str

    def __post_init__(self):
        if self.template_id not in TEMPLATE_IDS:
            raise ValueError(f"unknown template_id {self.template_id!r}")


def render_prompt1(context: str, question: str) -> Prompt:
    return Prompt(_PROMPT1_HEAD.format(u=context) + question + "]", "prompt1")


def prompt1_prefix(context: str) -> str:
    """Everything of prompt1 before the question payload."""
    return _PROMPT1_HEAD.format(u=context)


def render_prompt2(context: str, question: str, answer: str) -> Prompt:
    return Prompt(prompt2_prefix(context, question) + answer + "]", "prompt2")


def prompt2_prefix(context: str, question: str) -> str:
    """Everything of prompt2 before the answer payload."""
    return render_prompt1(context, question).rendered_text + "\nAnswer: ["


def render_rag_answer(contexts: Sequence[str], question: str) -> Prompt:
    blocks = " ".join(f"[{c}]" for c in contexts)
    return Prompt(_RAG_ANSWER_HEAD.format(contexts=blocks) + question + "]", "rag_answer")


def render_judge(question: str, response_a: str, response_b: str) -> Prompt:
    return Prompt(
        _JUDGE_TEMPLATE.format(q=question, a=response_a, b=response_b), "judge"
    )


def render_direct_query(question: str) -> Prompt:
    return Prompt(f"[{question}]", "direct_query")


# -- scored continuations ------------------------------------------------


@dataclass(frozen=True)
class ScoredContinuation:
    continuation_token_count: int
    sum_log_prob: float
    mean_log_prob: float

    def __post_init__(self):
        if self.continuation_token_count < 1:
            raise ValueError("continuation must have at least one token")
        if not np.isfinite(self.mean_log_prob):
            raise ValueError("mean_log_prob must be finite")


@dataclass
class ProviderConfig:
    kind: str = "mock"  # "mock" | "http"
    endpoint: str = ""
    model_name: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    seed: int = 0
    max_in_flight: int = 4
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "http" and not (self.endpoint and self.model_name):
            raise ValueError("http provider requires endpoint and model_name")


# -- contracts -----------------------------------------------------------


class Embedder(Protocol):
    fingerprint: str

    def embed(self, text: str) -> np.ndarray: ...


class LanguageModel(Protocol):
    def generate(self, prompt: Prompt) -> str: ...

    def score_continuation(self, prefix: str, continuation: str) -> ScoredContinuation: ...


class Judge(Protocol):
    def matches(self, candidate: str, reference: str, question: str) -> bool: ...


@dataclass
class ProviderBundle:
    embedder: Embedder
    lm: LanguageModel
    judge: Judge


# -- tokenization (mock-local) ------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace/punctuation tokenization used by the mocks."""
    return _TOKEN_RE.findall(text.lower())


# -- mock providers ------------------------------------------------------


class MockEmbedder:
    """Hashed bag-of-tokens embedder.

    Tokens are hashed (stable across processes) into ``dim`` buckets, counts
    accumulated, and the vector L2-normalized, so shared vocabulary yields a
    meaningful cosine gradient with zero external dependencies.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.fingerprint = f"mock-bag/{dim}/{seed}"

    def _bucket(self, token: str) -> int:
        digest = hashlib.md5(f"{self.seed}:{token}".encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            vec[self._bucket(tok)] += 1.0
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ValueError(f"text has no tokens to embed: {text!r}")
        return vec / norm


class MockLanguageModel:
    """Rule-table language model with overlap-based continuation scoring.

    ``rules`` is an ordered list of (trigger, answer) pairs: the first rule
    whose trigger occurs in the prompt wins.  Otherwise the first matching
    key of ``answers`` supplies a per-question default; ``default_answer``
    is the final fallback.
    """

    def __init__(self, rules=(), answers=None, default_answer="I do not know.",
                 seed: int = 0):
        self.rules = [(str(t), str(a)) for t, a in rules]
        self.answers = dict(answers or {})
        self.default_answer = default_answer
        self.seed = seed

    def generate(self, prompt: Prompt) -> str:
        text = prompt.rendered_text.lower()
        for trigger, answer in self.rules:
            if trigger.lower() in text:
                return answer
        for question, answer in self.answers.items():
            if question.lower() in text:
                return answer
        return self.default_answer

    def score_continuation(self, prefix: str, continuation: str) -> ScoredContinuation:
        if not continuation:
            raise ValueError("continuation must be non-empty")
        cont_tokens = tokenize(continuation)
        if not cont_tokens:
            raise ValueError(f"continuation has no tokens: {continuation!r}")
        prefix_tokens = set(tokenize(prefix))
        overlap = sum(tok in prefix_tokens for tok in cont_tokens) / len(cont_tokens)
        mean = overlap - 1.0  # in [-1, 0]
        return ScoredContinuation(
            continuation_token_count=len(cont_tokens),
            sum_log_prob=mean * len(cont_tokens),
            mean_log_prob=mean,
        )


def _normalize_ws(text: str) -> str:
    return " ".join(text.split()).casefold()


class MockJudge:
    """Case-insensitive containment (either direction) after whitespace
    normalization."""

    def matches(self, candidate: str, reference: str, question: str) -> bool:
        if not (candidate and reference and question):
            raise ValueError("judge inputs must be non-empty")
        a = _normalize_ws(candidate)
        b = _normalize_ws(reference)
        return a in b or b in a


# -- HTTP providers (OpenAI-compatible) ---------------------------------


class _HttpBase:
    def __init__(self, config: ProviderConfig, transport=None):
        if config.kind != "http":
            raise ValueError("HTTP provider requires kind='http'")
        self.config = config
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=config.endpoint,
            timeout=config.timeout,
            headers=headers,
            transport=transport,
        )
        self._gate = threading.BoundedSemaphore(max(1, config.max_in_flight))
        # logical-call counters; retries within one call count once
        self.usage = Counter()

    def _post(self, path: str, payload: dict) -> dict:
        last_exc = None
        for _attempt in range(self.config.max_retries + 1):
            try:
                with self._gate:
                    resp = self._client.post(path, json=payload)
                resp.raise_for_status()
                return resp.json()
            except httpx.HTTPError as exc:
                last_exc = exc
        raise ProviderError(
            f"POST {path} failed after {self.config.max_retries + 1} attempts: {last_exc}"
        ) from last_exc


class HttpEmbedder(_HttpBase):
    def __init__(self, config: ProviderConfig, transport=None):
        super().__init__(config, transport)
        self.fingerprint = f"http/{config.model_name}"

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        self.usage["embed"] += 1
        doc = self._post("/embeddings", {"model": self.config.model_name, "input": [text]})
        try:
            values = doc["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed embeddings response: {exc}") from exc
        vec = np.asarray(values, dtype=float)
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise ProviderError("embedding response is not a finite 1-D vector")
        return vec


class HttpLanguageModel(_HttpBase):
    def generate(self, prompt: Prompt) -> str:
        self.usage["generate"] += 1
        doc = self._post(
            "/chat/completions",
            {
                "model": self.config.model_name,
                "messages": [{"role": "user", "content": prompt.rendered_text}],
                "temperature": 0,
            },
        )
        try:
            text = doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat completion response: {exc}") from exc
        if not text:
            raise ProviderError("provider returned empty generation")
        return text

    def score_continuation(self, prefix: str, continuation: str) -> ScoredContinuation:
        if not continuation:
            raise ValueError("continuation must be non-empty")
        self.usage["score_continuation"] += 1
        doc = self._post(
            "/completions",
            {
                "model": self.config.model_name,
                "prompt": prefix + continuation,
                "max_tokens": 0,
                "echo": True,
                "logprobs": 0,
            },
        )
        try:
            lp = doc["choices"][0]["logprobs"]
            offsets = lp["text_offset"]
            token_lps = lp["token_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise CapabilityError(
                f"provider does not expose per-token log-probs: {exc}") from exc
        boundary = len(prefix)
        total = 0.0
        count = 0
        for off, tok_lp in zip(offsets, token_lps):
            if off >= boundary and tok_lp is not None:
                total += float(tok_lp)
                count += 1
        if count == 0:
            raise ProviderError("no continuation tokens in log-prob response")
        return ScoredContinuation(count, total, total / count)


class HttpJudge(_HttpBase):
    _VERDICT_RE = re.compile(r"\b(YES|NO)\b")

    def __init__(self, config: ProviderConfig, transport=None):
        super().__init__(config, transport)
        self.parse_failures = 0

    def matches(self, candidate: str, reference: str, question: str) -> bool:
        if not (candidate and reference and question):
            raise ValueError("judge inputs must be non-empty")
        self.usage["judge"] += 1
        prompt = render_judge(question, candidate, reference)
        doc = self._post(
            "/chat/completions",
            {
                "model": self.config.model_name,
                "messages": [{"role": "user", "content": prompt.rendered_text}],
                "temperature": 0,
            },
        )
        try:
            text = doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed judge response: {exc}") from exc
        verdict = self._VERDICT_RE.search(text.upper())
        if verdict is None:
            # fail-safe toward "no match" so scope narrowing terminates
            self.parse_failures += 1
            log.warning("judge returned neither YES nor NO: %r", text)
            return False
        return verdict.group(1) == "YES"


# -- config-driven construction -----------------------------------------


def _config_from_dict(obj: dict) -> ProviderConfig:
    return ProviderConfig(
        kind=obj.get("kind", "mock"),
        endpoint=obj.get("endpoint", ""),
        model_name=obj.get("model_name", ""),
        timeout=obj.get("timeout", 30.0),
        max_retries=obj.get("max_retries", 2),
        seed=obj.get("seed", 0),
        max_in_flight=obj.get("max_in_flight", 4),
        options={k: v for k, v in obj.items()
                 if k not in ("kind", "endpoint", "model_name", "timeout",
                              "max_retries", "seed", "max_in_flight")},
    )


def make_embedder(obj: dict) -> Embedder:
    cfg = _config_from_dict(obj)
    if cfg.kind == "mock":
        return MockEmbedder(dim=cfg.options.get("dim", 256), seed=cfg.seed)
    return HttpEmbedder(cfg)


def make_language_model(obj: dict) -> LanguageModel:
    cfg = _config_from_dict(obj)
    if cfg.kind == "mock":
        rules = [(r["trigger"], r["answer"]) for r in cfg.options.get("rules", [])]
        return MockLanguageModel(
            rules=rules,
            answers=cfg.options.get("answers", {}),
            default_answer=cfg.options.get("default_answer", "I do not know."),
            seed=cfg.seed,
        )
    return HttpLanguageModel(cfg)


def make_judge(obj: dict) -> Judge:
    cfg = _config_from_dict(obj)
    if cfg.kind == "mock":
        return MockJudge()
    return HttpJudge(cfg)


def make_bundle(obj: dict) -> ProviderBundle:
    """Build all three providers from a {"embedder":..,"lm":..,"judge":..} dict."""
    return ProviderBundle(
        embedder=make_embedder(obj.get("embedder", {})),
        lm=make_language_model(obj.get("lm", {})),
        judge=make_judge(obj.get("judge", {})),
    )
