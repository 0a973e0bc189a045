"""Exception hierarchy shared by every stage of the pipeline.

Data errors (bad files, bad sizes, inconsistent inputs) and numerical errors
(solver failures, divergence) are kept apart so the CLI can map them to
distinct exit codes.
"""


class PcAtlasError(Exception):
    """Base class for all package errors."""


class DataError(PcAtlasError, ValueError):
    """Input data is malformed or inconsistent."""


class ParseError(DataError):
    """A mesh or point-cloud file could not be parsed.

    Attributes:
        line: 1-based line number for text formats, or None.
        offset: byte offset for binary formats, or None.
    """

    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class StructuralError(DataError):
    """Parsed geometry violates a structural invariant (e.g. face index out of range)."""


class DegenerateGeometryError(DataError):
    """Geometry has zero extent or zero surface area."""


class SizeError(DataError):
    """Requested or supplied element counts are incompatible."""


class ConsistencyError(DataError):
    """Two inputs that must agree (shapes, sides, assignments) do not."""


class EmptyInputError(DataError):
    """An operation received an input with nothing to work on."""


class NumericalError(PcAtlasError, ArithmeticError):
    """Base class for solver and divergence failures."""


class SolverError(NumericalError):
    """An assignment solver failed to converge."""

    def __init__(self, message, achieved_eps=None):
        super().__init__(message)
        self.achieved_eps = achieved_eps


class NumericalDivergenceError(NumericalError):
    """A non-finite value appeared during sampling."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
