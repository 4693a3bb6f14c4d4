"""Exception hierarchy shared by all modules.

Every error carries a ``record()`` so the CLI can serialize it verbatim.
"""

from __future__ import annotations


class ConcentraError(Exception):
    """Base class; ``field`` is a dotted config path when known."""

    kind = "error"

    def __init__(self, message: str, *, field: str | None = None, **details):
        super().__init__(message)
        self.field = field
        self.details = details

    def record(self) -> dict:
        rec = {"kind": self.kind, "message": str(self)}
        if self.field is not None:
            rec["field"] = self.field
        rec.update({k: v for k, v in self.details.items()})
        return rec


class ValidationError(ConcentraError, ValueError):
    kind = "validation"


class DomainError(ValidationError):
    """Coefficient outside its admissible range (e.g. 1 + V <= 0)."""

    kind = "domain"


class PlacementError(ValidationError):
    kind = "placement"


class ResourceError(ConcentraError):
    kind = "resource"


class SolverError(ConcentraError, RuntimeError):
    kind = "solver"


class ConvergenceError(SolverError):
    kind = "convergence"


class DegenerateError(SolverError):
    """Input or result is degenerate (zero denominator, zero eigenvalue, ...)."""

    kind = "degenerate"
