"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`NrrepError`. The three
intermediate classes map onto the CLI exit-code families (parse, geometry,
I/O).
"""

from __future__ import annotations


class NrrepError(Exception):
    """Base class for all toolkit errors."""


class GeometryError(NrrepError):
    pass


class ParseError(NrrepError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class IoFailure(NrrepError):
    pass


class EvaluationError(NrrepError):
    pass


# geometry
class DegenerateProjection(GeometryError):
    pass


class NonPositiveDefinite(GeometryError):
    pass


class ZeroArea(GeometryError):
    pass


class Singular(GeometryError):
    pass


# masks / evaluation
class EmptySupport(GeometryError):
    pass


class EmptySet(EvaluationError):
    pass


class EmptyCommonRegion(EvaluationError):
    pass


class InsufficientDetectors(EvaluationError):
    pass


class InvalidParameter(EvaluationError):
    pass


# matching
class DimensionMismatch(EvaluationError):
    pass


class TooFewCandidates(EvaluationError):
    pass


# parsing
class MalformedHeader(ParseError):
    pass


class CountMismatch(ParseError):
    pass


class NonNumericToken(ParseError):
    pass


class MalformedMatrix(ParseError):
    pass


class ManifestError(ParseError):
    pass


class NonPositiveDefiniteRow(ParseError):
    pass
