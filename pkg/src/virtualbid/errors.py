"""Exception hierarchy shared by every module.

The CLI maps :class:`InputError` subclasses to exit code 2 and everything else
derived from :class:`VirtualBidError` to exit code 1.
"""

from __future__ import annotations


class VirtualBidError(Exception):
    """Base class for all package errors."""


class InputError(VirtualBidError):
    """Bad or missing input files / configuration."""


class NumericError(VirtualBidError):
    """A numerical precondition failed or an algorithm broke down."""


class DimensionMismatch(NumericError, ValueError):
    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected shape {expected}, got {actual}")


class NotPositiveDefinite(NumericError):
    def __init__(self, smallest_pivot: float, context: str = ""):
        self.smallest_pivot = smallest_pivot
        msg = f"matrix is not positive definite (smallest pivot {smallest_pivot:.6g})"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class NonpositivePrice(NumericError):
    def __init__(self, price: float, floor: float):
        self.price = price
        self.floor = floor
        super().__init__(f"price {price!r} is not above the floor {floor!r}")


class SingularDesign(NumericError):
    def __init__(self, node: str, rank: int, columns: int):
        self.node = node
        self.rank = rank
        self.columns = columns
        super().__init__(f"design matrix for node {node!r} has rank {rank} < {columns}")


class InsufficientHistory(NumericError):
    def __init__(self, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(f"need {required} observations, only {available} available")


class Diverged(NumericError):
    def __init__(self, message: str, last_finite=None, iteration: int = 0):
        self.last_finite = last_finite
        self.iteration = iteration
        super().__init__(f"{message} (iteration {iteration})")


class DegenerateDrift(NumericError):
    def __init__(self, rho: float, floor: float):
        self.rho = rho
        self.floor = floor
        super().__init__(f"signal b'S^-1 b = {rho:.3g} is not above the floor {floor:.3g}")


class ParseError(InputError):
    def __init__(self, path, line: int, column: str, message: str):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{self.path}:{line}: column {column!r}: {message}")


class UnknownNode(InputError):
    def __init__(self, path, line: int, node: str):
        self.path = str(path)
        self.line = line
        self.node = node
        super().__init__(f"{self.path}:{line}: unknown node {node!r}")


class EmptyDataset(InputError):
    pass


class ConfigError(InputError):
    pass
