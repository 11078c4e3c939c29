"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: InputError -> 2, NumericalError -> 3.
"""


class RadlabelError(Exception):
    """Base class for all errors raised by this package."""


class InputError(RadlabelError):
    """Bad user input: missing/malformed files, invalid configuration."""


class NumericalError(RadlabelError):
    """Non-finite values or other numerical failures during training."""
