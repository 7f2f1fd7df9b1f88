"""Exception and warning types shared across the package."""

from __future__ import annotations


class TabTextQAError(Exception):
    """Base class for all package errors."""


class MalformedRecord(TabTextQAError):
    """A source record could not be parsed or violates a corpus invariant."""

    def __init__(self, reason: str, *, path: str | None = None, index: int | None = None):
        self.reason = reason
        self.path = path
        self.index = index
        where = []
        if path is not None:
            where.append(str(path))
        if index is not None:
            where.append(f"line {index + 1}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {reason}" if prefix else reason)


class UnknownTable(TabTextQAError, KeyError):
    def __str__(self) -> str:
        return f"unknown table id {self.args[0]!r}"


class RowIndexOutOfRange(TabTextQAError, IndexError):
    pass


class UnknownQuestion(TabTextQAError, KeyError):
    def __init__(self, question_id: str, nearest: list[str] | None = None):
        super().__init__(question_id)
        self.question_id = question_id
        self.nearest = nearest or []

    def __str__(self) -> str:
        msg = f"unknown question id {self.question_id!r}"
        if self.nearest:
            msg += f"; nearest ids: {', '.join(self.nearest)}"
        return msg


class DimensionMismatch(TabTextQAError, ValueError):
    pass


class BackendError(TabTextQAError):
    """A model backend call failed.

    ``stage`` names the pipeline stage the call was made for (``"linearize"``,
    ``"summarize"``, ``"main_qa"``...) and is filled in by the caller.
    """

    def __init__(self, message: str, *, status: int | None = None, stage: str | None = None):
        super().__init__(message)
        self.message = message
        self.status = status
        self.stage = stage

    def __str__(self) -> str:
        parts = [self.message]
        if self.status is not None:
            parts.append(f"status={self.status}")
        if self.stage is not None:
            parts.append(f"stage={self.stage}")
        return " ".join(parts)


class EmptyDecomposition(TabTextQAError):
    pass


class MissingTrace(TabTextQAError):
    def __init__(self, question_ids: list[str]):
        self.question_ids = list(question_ids)
        super().__init__(f"missing traces for questions: {', '.join(self.question_ids)}")


class MismatchedCorpus(TabTextQAError, ValueError):
    pass


class ConfigError(TabTextQAError, ValueError):
    pass


class CorpusWarning(UserWarning):
    pass


class TruncationWarning(UserWarning):
    pass


class CacheCorrupt(UserWarning):
    """Emitted when a cache entry fails its checksum; the entry is recomputed."""


def tag_stage(exc: BackendError, stage: str) -> BackendError:
    if exc.stage is None:
        exc.stage = stage
    return exc
