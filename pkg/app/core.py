# ───────────────────────────────────────────────────────────────────────────────
# app/core.py
from __future__ import annotations

from typing import Optional, Sequence


class GanLabError(Exception):
    """Base class for every error raised by the lab."""


class DimensionError(GanLabError, ValueError):
    """Operand shapes do not fit the operation."""

    def __init__(self, op: str, *shapes: Sequence[int]) -> None:
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        pretty = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {pretty}")


class DomainError(GanLabError, ValueError):
    """An input lies outside the mathematical domain of the operation."""

    def __init__(self, op: str, index: tuple, value: float) -> None:
        self.op = op
        self.index = index
        self.value = value
        super().__init__(f"{op}: entry {index} = {value!r} is outside the domain")


class ContractViolation(GanLabError, ValueError):
    """A documented precondition does not hold."""


class ConvergenceError(GanLabError, RuntimeError):
    """An iterative solver ran out of iterations."""

    def __init__(self, what: str, iterations: int, residual: float) -> None:
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(residual norm {residual:.3e})"
        )


class ConfigError(GanLabError, ValueError):
    """A training config is malformed. Carries the offending field when known."""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ) -> None:
        self.field = field
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}" + (f", column {column}" if column is not None else ""))
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{'; '.join(where)}: " if where else ""
        super().__init__(prefix + message)
