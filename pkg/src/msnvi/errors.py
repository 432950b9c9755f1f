"""Exception types shared across the toolkit."""


class MsnviError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(MsnviError):
    """Operand shapes do not conform."""


class DomainError(MsnviError):
    """Input outside the mathematical domain of an operation."""


class ContractError(MsnviError):
    """A documented precondition was violated by the caller."""


class FusionDegenerateError(MsnviError):
    """Product-of-experts fusion produced a nonpositive precision entry."""


class ConflictUndefinedError(MsnviError):
    """Conflict ratio undefined: the evidence belief is uninformative."""


class FormatError(MsnviError):
    """Malformed, corrupted or unsupported file content."""


class EmptyDatasetError(MsnviError):
    """An operation that needs at least one record got none."""


class GeometryError(MsnviError):
    """A rendered point fell outside the camera frustum."""


class TrainingAbortedError(MsnviError):
    """Training stopped on a non-finite loss; carries step diagnostics."""

    def __init__(self, step, record_ids, value):
        self.step = step
        self.record_ids = list(record_ids)
        self.value = value
        super().__init__(
            f"non-finite loss {value} at step {step}, records {self.record_ids}"
        )
