"""Exception types shared across the package.

Numerical failures derive from ``NumericalError`` so the CLI can map them to a
single exit code; file problems derive from ``FormatError``.
"""

from __future__ import annotations


class RgbdUsError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(RgbdUsError):
    pass


class NonPositiveDepth(NumericalError):
    pass


class InvalidGeometry(RgbdUsError, ValueError):
    pass


class AlphaOutOfRange(RgbdUsError, ValueError):
    pass


class EmptyArrangement(InvalidGeometry):
    pass


class BadEdgeId(InvalidGeometry):
    pass


class EmptyMesh(RgbdUsError, ValueError):
    pass


class DegenerateIntersection(NumericalError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class NoCorrespondences(NumericalError):
    pass


class EmptyRoi(NumericalError):
    pass


class MatchFailed(NumericalError):
    pass


class TooFewCorrespondences(NumericalError):
    pass


class DegeneratePixelConfiguration(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class TooFewDetections(NumericalError):
    pass


class BehindCamera(NumericalError):
    pass


class DegenerateQuad(NumericalError):
    pass


class ConfigError(RgbdUsError, ValueError):
    pass


class FormatError(RgbdUsError):
    pass


class ParseError(FormatError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class VersionMismatch(FormatError):
    pass
