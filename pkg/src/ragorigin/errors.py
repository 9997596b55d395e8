"""Exception hierarchy shared across the package."""


class RagOriginError(Exception):
    """Base class for all package errors."""


class CorpusError(RagOriginError):
    """Invalid knowledge-base state or query (bad vectors, empty base, ...)."""


class IngestError(CorpusError):
    """Corpus file could not be ingested (parse failure, duplicate id)."""


class ProviderError(RagOriginError):
    """A provider call failed after exhausting retries."""


class CapabilityError(ProviderError):
    """The provider cannot perform the requested operation (e.g. no log-probs)."""


class AttributionError(RagOriginError):
    """An attribution stage failed; carries the stage name and partial trace."""

    def __init__(self, stage: str, message: str, partial_segments=None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.partial_segments = list(partial_segments or [])
