"""Knowledge base storage and similarity-ranked retrieval.

Records are stored together with their embedding vectors, computed once at
ingest time and keyed by the embedder fingerprint.  Retrieval is exact:
the full similarity ranking is materialized per query (desk-scale corpora),
with ties broken by ascending id so results are reproducible.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CorpusError, IngestError

_ZERO_NORM_EPS = 1e-12

VALID_TRUTH_LABELS = ("benign", "poisoned")


@dataclass(frozen=True)
class TextRecord:
    """A single text in the knowledge base.

    ``truth_label`` is evaluation ground truth only; nothing on the
    attribution path may read it.
    """

    id: str
    content: str
    source_tag: str = ""
    truth_label: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise CorpusError("record id must be non-empty")
        if not self.content:
            raise CorpusError(f"record {self.id!r}: content must be non-empty")
        if self.truth_label is not None and self.truth_label not in VALID_TRUTH_LABELS:
            raise CorpusError(
                f"record {self.id!r}: truth_label must be one of {VALID_TRUTH_LABELS}"
            )


def similarity(a, b, metric: str = "cosine") -> float:
    """Similarity between two embedding vectors under the given metric."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise CorpusError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise CorpusError("embedding vectors must be finite")
    dot = float(a @ b)
    if metric == "dot":
        return dot
    if metric == "cosine":
        na = float(np.linalg.norm(a))
        nb = float(np.linalg.norm(b))
        if na < _ZERO_NORM_EPS or nb < _ZERO_NORM_EPS:
            raise CorpusError("cosine similarity undefined for zero-norm vector")
        return dot / (na * nb)
    raise CorpusError(f"unknown metric {metric!r}")


def _check_vector(vec, rec_id: str) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise CorpusError(f"vector for {rec_id!r} must be a non-empty 1-D array")
    if not np.all(np.isfinite(v)):
        raise CorpusError(f"vector for {rec_id!r} contains non-finite components")
    return v


class KnowledgeBase:
    """Immutable-during-query collection of records plus their vectors.

    ``insert``/``remove`` return a new logical version; readers of an
    existing instance never observe a half-applied update.
    """

    def __init__(self, records, vectors, metric="cosine",
                 embedder_fingerprint=""):
        records = list(records)
        rec_map = {}
        for rec in records:
            if rec.id in rec_map:
                raise CorpusError(f"duplicate record id {rec.id!r}")
            rec_map[rec.id] = rec
        if set(rec_map) != set(vectors):
            missing = set(rec_map) ^ set(vectors)
            raise CorpusError(f"records/vectors mismatch for ids: {sorted(missing)}")
        if metric not in ("cosine", "dot"):
            raise CorpusError(f"unknown metric {metric!r}")

        vec_map = {}
        dim = None
        for rid in rec_map:
            v = _check_vector(vectors[rid], rid)
            if dim is None:
                dim = v.size
            elif v.size != dim:
                raise CorpusError(
                    f"vector for {rid!r} has dim {v.size}, expected {dim}")
            if metric == "cosine":
                norm = float(np.linalg.norm(v))
                if norm < _ZERO_NORM_EPS:
                    raise CorpusError(f"zero-norm vector for {rid!r} under cosine metric")
                v = v / norm
            v.setflags(write=False)
            vec_map[rid] = v

        self._records = rec_map
        self._vectors = vec_map
        self._ids = list(rec_map)
        self.metric = metric
        self.embedder_fingerprint = embedder_fingerprint
        self.dim = dim
        self._matrix = None  # lazy (N, dim) cache in self._ids order

    def __len__(self):
        return len(self._records)

    def __contains__(self, rec_id: str) -> bool:
        return rec_id in self._records

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    @property
    def records(self) -> list[TextRecord]:
        return [self._records[i] for i in self._ids]

    def record(self, rec_id: str) -> TextRecord:
        try:
            return self._records[rec_id]
        except KeyError:
            raise CorpusError(f"no record with id {rec_id!r}") from None

    def content(self, rec_id: str) -> str:
        return self.record(rec_id).content

    def vector(self, rec_id: str) -> np.ndarray:
        try:
            return self._vectors[rec_id]
        except KeyError:
            raise CorpusError(f"no vector for id {rec_id!r}") from None

    # -- ranking ---------------------------------------------------------

    def _scores(self, q_vec) -> np.ndarray:
        q = _check_vector(q_vec, "<query>")
        if self.dim is not None and q.size != self.dim:
            raise CorpusError(f"query dim {q.size} != corpus dim {self.dim}")
        if self.metric == "cosine":
            norm = float(np.linalg.norm(q))
            if norm < _ZERO_NORM_EPS:
                raise CorpusError("cosine similarity undefined for zero-norm query")
            q = q / norm
        if self._matrix is None:
            self._matrix = np.stack([self._vectors[i] for i in self._ids])
        return self._matrix @ q

    def rank_all(self, q_vec) -> list[str]:
        """All record ids in descending similarity order, ties by ascending id."""
        if not self._ids:
            raise CorpusError("cannot rank an empty knowledge base")
        scores = self._scores(q_vec)
        order = np.lexsort((np.array(self._ids), -scores))
        return [self._ids[i] for i in order]

    def retrieve_top_k(self, q_vec, k: int) -> list[tuple[str, float]]:
        """Top-k (id, score) pairs; clamps k to the corpus size."""
        if k < 1:
            raise CorpusError("k must be >= 1")
        if not self._ids:
            raise CorpusError("cannot retrieve from an empty knowledge base")
        scores = self._scores(q_vec)
        by_id = dict(zip(self._ids, scores))
        ranked = self.rank_all(q_vec)
        return [(rid, float(by_id[rid])) for rid in ranked[:k]]

    # -- updates ---------------------------------------------------------

    def insert(self, record: TextRecord, embedder) -> "KnowledgeBase":
        if record.id in self._records:
            raise CorpusError(f"id collision on insert: {record.id!r}")
        if self.embedder_fingerprint and embedder.fingerprint != self.embedder_fingerprint:
            raise CorpusError(
                f"embedder fingerprint {embedder.fingerprint!r} does not match "
                f"knowledge base fingerprint {self.embedder_fingerprint!r}")
        records = self.records + [record]
        vectors = dict(self._vectors)
        vectors[record.id] = embedder.embed(record.content)
        return KnowledgeBase(records, vectors, self.metric, self.embedder_fingerprint)

    def remove(self, rec_id: str) -> "KnowledgeBase":
        if rec_id not in self._records:
            raise CorpusError(f"cannot remove absent id {rec_id!r}")
        records = [r for r in self.records if r.id != rec_id]
        vectors = {i: v for i, v in self._vectors.items() if i != rec_id}
        return KnowledgeBase(records, vectors, self.metric, self.embedder_fingerprint)

    def remove_many(self, rec_ids: Iterable[str]) -> "KnowledgeBase":
        kb = self
        for rid in rec_ids:
            kb = kb.remove(rid)
        return kb


def ingest(path, embedder, metric: str = "cosine") -> KnowledgeBase:
    """Load a JSONL corpus file and embed every record.

    Each line is an object with required keys "id" and "content" and
    optional "source_tag" / "truth_label".
    """
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "content" not in obj:
                raise IngestError(f"{path}:{lineno}: line must be an object with 'id' and 'content'")
            try:
                rec = TextRecord(
                    id=str(obj["id"]),
                    content=obj["content"],
                    source_tag=obj.get("source_tag", ""),
                    truth_label=obj.get("truth_label"),
                )
            except CorpusError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            if rec.id in seen:
                raise IngestError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    vectors = {rec.id: embedder.embed(rec.content) for rec in records}
    return KnowledgeBase(records, vectors, metric, embedder.fingerprint)


# -- persistence ---------------------------------------------------------

STORE_SCHEMA = "ragorigin-store/1"


def save_store(kb: KnowledgeBase, path) -> None:
    """Serialize a knowledge base (records + vectors) atomically."""
    doc = {
        "schema": STORE_SCHEMA,
        "metric": kb.metric,
        "embedder_fingerprint": kb.embedder_fingerprint,
        "records": [
            {
                "id": rec.id,
                "content": rec.content,
                "source_tag": rec.source_tag,
                "truth_label": rec.truth_label,
                "vector": [float(x) for x in kb.vector(rec.id)],
            }
            for rec in kb.records
        ],
    }
    atomic_write_text(path, json.dumps(doc, sort_keys=True))


def load_store(path) -> KnowledgeBase:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != STORE_SCHEMA:
        raise CorpusError(f"{path}: unexpected store schema {doc.get('schema')!r}")
    records = []
    vectors = {}
    for obj in doc["records"]:
        rec = TextRecord(
            id=obj["id"],
            content=obj["content"],
            source_tag=obj.get("source_tag", ""),
            truth_label=obj.get("truth_label"),
        )
        records.append(rec)
        vectors[rec.id] = np.asarray(obj["vector"], dtype=float)
    return KnowledgeBase(records, vectors, doc["metric"], doc["embedder_fingerprint"])


def atomic_write_text(path, text: str) -> None:
    """Write via temp file + rename so readers never see partial output."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
