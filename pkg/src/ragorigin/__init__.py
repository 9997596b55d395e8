"""Forensic attribution of misgeneration events to poisoned knowledge-base
texts, plus the attack generators and evaluation harness needed to exercise
the engine end to end."""

from .attribution import (
    AttributionReport,
    AttributionScope,
    MisgenerationEvent,
    ResponsibilityRecord,
    ScopeSegment,
    attribute,
    embedding_similarity,
    fuse_scores,
    generation_influence,
    is_poisoning_event,
    narrow_scope,
    responsibility_scores,
    semantic_correlation,
    split_scores,
    zscore_normalize,
)
from .corpus import (
    KnowledgeBase,
    TextRecord,
    ingest,
    load_store,
    save_store,
    similarity,
)
from .errors import (
    AttributionError,
    CapabilityError,
    CorpusError,
    IngestError,
    ProviderError,
    RagOriginError,
)
from .providers import (
    MockEmbedder,
    MockJudge,
    MockLanguageModel,
    Prompt,
    ProviderBundle,
    ProviderConfig,
    ScoredContinuation,
    make_bundle,
)

__version__ = "0.1.0"
