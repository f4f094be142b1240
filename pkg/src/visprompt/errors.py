"""Exception hierarchy.

Every error raised by the package derives from :class:`VispromptError`.  The
CLI maps :class:`ValidationError` (and its subclasses) to exit code 2 and any
other :class:`VispromptError` to exit code 3.
"""


class VispromptError(Exception):
    """Base class for all package errors."""


class ValidationError(VispromptError, ValueError):
    """An input violates a documented precondition or type invariant."""


class DimensionMismatchError(ValidationError):
    """Two embeddings (or files) disagree on the embedding dimension."""


class FormatError(ValidationError):
    """A file could not be parsed as the expected structured text."""


class VersionMismatchError(ValidationError):
    """A file declares a format version this package does not read."""


class InfeasibleSpecError(VispromptError):
    """Rejection sampling could not satisfy a testbed constraint."""
