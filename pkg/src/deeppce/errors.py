"""Error types shared across the library.

Every error carries a short machine-parsable ``category`` used by the CLI
to emit one-line diagnostics.
"""


class DeepPceError(Exception):
    category = "error"


class DomainError(DeepPceError, ValueError):
    """Input outside the support of a bounded polynomial family."""

    category = "domain-error"


class UnsupportedDegreeError(DeepPceError, ValueError):
    category = "degree-error"


class TooLargeError(DeepPceError, ValueError):
    """A requested basis or design matrix exceeds the configured cap."""

    category = "too-large"


class RankDeficiencyError(DeepPceError, ValueError):
    category = "rank-deficient"


class ShapeError(DeepPceError, ValueError):
    category = "shape-error"


class NonFiniteError(DeepPceError, FloatingPointError):
    """A forward or backward pass produced inf/nan; names the layer."""

    category = "non-finite"


class MissingStatsError(DeepPceError, ValueError):
    """Batch-norm folding requested before running statistics exist."""

    category = "missing-stats"


class UnfoldedModelError(DeepPceError, ValueError):
    """Low-level moment propagation requires folded batch norm."""

    category = "unfolded-model"


class TrainingFailedError(DeepPceError, RuntimeError):
    category = "training-failed"


class MalformedFileError(DeepPceError, ValueError):
    category = "malformed-file"


class FileVersionError(DeepPceError, ValueError):
    category = "version-mismatch"


class ConfigError(DeepPceError, ValueError):
    category = "config-error"


class DataError(DeepPceError, ValueError):
    category = "data-error"
