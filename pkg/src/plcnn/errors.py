"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 1,
I/O and dataset-ingestion problems exit 2, numeric divergence exits 3.
"""


class PlcnnError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PlcnnError):
    """A shape, preset, or parameter combination that can never work."""


class InputError(PlcnnError):
    """Runtime data that violates an operation's preconditions."""


class IngestionError(PlcnnError):
    """A dataset tree or image file that cannot be loaded."""


class DivergenceError(PlcnnError):
    """Training produced a non-finite loss."""
