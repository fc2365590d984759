"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit
``{"error": code, "message": ..., "context": ...}`` on stderr.
"""

from __future__ import annotations


class UncGraspError(Exception):
    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": self.message}
        if self.context:
            out["context"] = {k: _jsonable(v) for k, v in self.context.items()}
        return out


def _jsonable(v):
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    return str(v)


class CloudIOError(UncGraspError):
    code = "io-error"


class ParseError(UncGraspError):
    code = "parse-error"


class FormatError(UncGraspError):
    code = "format-error"


class LengthMismatchError(UncGraspError):
    code = "length-mismatch-error"


class InvalidGeometryError(UncGraspError):
    code = "invalid-geometry-error"


class EmptySceneError(UncGraspError):
    code = "empty-scene-error"


class InsufficientPointsError(UncGraspError):
    code = "insufficient-points-error"


class NoPlaneFoundError(UncGraspError):
    code = "no-plane-found-error"


class EmptyPartialError(UncGraspError):
    code = "empty-partial-error"


class InvalidTError(UncGraspError):
    code = "invalid-T-error"


class CountMismatchError(UncGraspError):
    code = "count-mismatch-error"


class PartialMismatchError(UncGraspError):
    code = "partial-mismatch-error"


class InvalidStackError(UncGraspError):
    code = "invalid-stack-error"


class TooFewPointsError(UncGraspError):
    code = "too-few-points-error"


class NoCandidatesError(UncGraspError):
    code = "no-candidates-error"


class SchemaError(UncGraspError):
    code = "schema-error"


class EmptyCandidatesError(UncGraspError):
    code = "empty-candidates-error"


class InsufficientExecutionsError(UncGraspError):
    code = "insufficient-executions-error"


class ConfigError(UncGraspError):
    code = "config-error"


class StageError(UncGraspError):
    """Wraps a module error with the scene/method it occurred in."""

    code = "stage-error"

    def __init__(self, message: str, cause: UncGraspError | None = None, **context):
        super().__init__(message, **context)
        if cause is not None:
            self.code = cause.code
            self.context.update(cause.context)
