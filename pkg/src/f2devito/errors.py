"""Exception types shared across the pipeline."""


class F2DevitoError(Exception):
    """Base class for all pipeline errors."""


class UnsupportedFormat(F2DevitoError):
    def __init__(self, path: str):
        super().__init__(f"unsupported document format: {path}")
        self.path = path


class ParseFailure(F2DevitoError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"failed to parse {path}: {reason}")
        self.path = path
        self.reason = reason


class UnsplittableChunk(F2DevitoError):
    """No legal boundary splits the chunk into pieces of at least the minimum size."""

    def __init__(self, chunk_id: str):
        super().__init__(f"chunk {chunk_id} has no legal split boundaries")
        self.chunk_id = chunk_id


class EmptyQuery(F2DevitoError):
    pass


class EmptyText(F2DevitoError):
    pass


class EmptyGraph(F2DevitoError):
    pass


class EmptySource(F2DevitoError):
    pass


class UnknownStrategy(F2DevitoError):
    def __init__(self, strategy: str):
        super().__init__(f"unknown retrieval strategy: {strategy!r}")
        self.strategy = strategy


class BackendUnavailable(F2DevitoError):
    pass


class RateLimited(F2DevitoError):
    pass


class RequestTimeout(F2DevitoError):
    pass


class MalformedJson(F2DevitoError):
    pass


class SchemaViolation(F2DevitoError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"schema violation on {field!r}: {reason}")
        self.field = field
        self.reason = reason


class JudgeUnparseable(F2DevitoError):
    pass


class FormatterFailed(F2DevitoError):
    pass


class MissingGroundTruth(F2DevitoError):
    pass


class RunnerMisconfigured(F2DevitoError):
    pass
