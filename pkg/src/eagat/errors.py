"""Exception types shared across the package."""


class EagatError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EagatError):
    """Tensor dimensions are incompatible for the requested operation."""


class ContractError(EagatError):
    """A documented precondition of an operation was violated."""


class ConfigError(EagatError):
    """A configuration value is missing, malformed, or out of range."""


class CorpusValidationError(EagatError):
    """A document or corpus file violates the data-model invariants.

    Carries the offending document id and, when parsing a file, the
    1-based line number.
    """

    def __init__(self, message: str, doc_id: str | None = None, line: int | None = None):
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if doc_id is not None:
            prefix += f"document {doc_id!r}: "
        super().__init__(prefix + message)
        self.doc_id = doc_id
        self.line = line


class EmptyDocumentError(CorpusValidationError):
    """Raw text or a corpus contained no clause content at all."""


class DegenerateSampleError(EagatError):
    """A statistic is undefined for the given sample (e.g. zero variance)."""


class TrainingError(EagatError):
    """Optimization produced a non-finite loss; carries the offending doc_id."""

    def __init__(self, message: str, doc_id: str | None = None):
        super().__init__(message)
        self.doc_id = doc_id
