"""Exception hierarchy shared across the package.

Every error raised by pivotnet derives from :class:`PivotnetError`, so
callers (and the CLI) can map failure categories to exit codes without
string matching.
"""


class PivotnetError(Exception):
    """Base class for all pivotnet errors."""


class ConfigError(PivotnetError):
    """Invalid architecture, head layout, or run configuration."""


class DataError(PivotnetError):
    """Malformed dataset file or sample violating an invariant."""


class NumericalError(PivotnetError):
    """Non-finite value encountered during a numerical computation.

    ``layer_index`` identifies the offending layer when the overflow
    happened inside a network forward/backward pass, else it is None.
    """

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class TrainingError(PivotnetError):
    """Training diverged.  Carries the iteration index and, when available,
    the last numerically sound state of both players."""

    def __init__(self, message, iteration=None, last_good=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_good = last_good


class EvaluationError(PivotnetError):
    """An evaluator was called with unusable inputs."""
