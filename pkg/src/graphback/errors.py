"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class GraphBackError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(GraphBackError):
    """Invalid configuration or arguments (bad flag combinations, infeasible
    poisoning rates, empty selections)."""


class DataError(GraphBackError):
    """Missing or malformed input data (dataset files, dumps, checkpoints)."""


class NumericalError(GraphBackError):
    """Non-finite values encountered during training or evaluation."""
