"""Exception hierarchy.

Every error carries a short machine-parsable ``category`` used by the CLI
to emit one-line diagnostics (``error: <category>: <message>``).
"""


class BlobsegError(Exception):
    """Base class for all library errors."""

    category = "internal"


class DimensionError(BlobsegError, ValueError):
    """Array shapes or extents are inconsistent with the operation."""

    category = "dimension"


class FormatError(BlobsegError, ValueError):
    """A file is malformed: bad magic, truncated payload, wrong field count."""

    category = "format"


class DegenerateInputError(BlobsegError, ValueError):
    """Geometrically degenerate input: near-zero depth, collinear points."""

    category = "degenerate"


class BlobConsistencyError(BlobsegError, ValueError):
    """A blob violates its contract, e.g. spans several ground-truth classes."""

    category = "blob"


class DivergenceError(BlobsegError, RuntimeError):
    """Training produced a non-finite loss or gradient."""

    category = "divergence"


class ConfigError(BlobsegError, ValueError):
    """Invalid experiment configuration."""

    category = "config"
