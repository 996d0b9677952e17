"""Exception hierarchy shared by every lari module."""

from __future__ import annotations


class LariError(Exception):
    """Base class; ``code`` is the stable name surfaced by the CLI."""

    @property
    def code(self) -> str:
        return type(self).__name__


# geometry
class EmptyMesh(LariError, ValueError):
    pass


# rendering / masks
class IndexOutOfRange(LariError, ValueError):
    pass


class ShapeMismatch(LariError, ValueError):
    pass


class NonFiniteLogits(LariError, ValueError):
    pass


# alignment / metrics
class DegenerateSystem(LariError, ArithmeticError):
    pass


class DegenerateCovariance(LariError, ArithmeticError):
    pass


class EmptyCloud(LariError, ValueError):
    pass


class EmptyRegion(LariError, ValueError):
    pass


# io
class ParseError(LariError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None, offset: int | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedFormat(LariError, ValueError):
    pass


class CorruptHeader(LariError, ValueError):
    pass


class TruncatedFile(LariError, ValueError):
    pass


class VersionMismatch(LariError, ValueError):
    pass


class InvalidRotation(LariError, ValueError):
    pass


# cli
class EmptyCorpus(LariError, ValueError):
    pass
