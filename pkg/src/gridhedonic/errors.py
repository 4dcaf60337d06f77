"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration and validation problems
exit 2, numerical failures exit 3, I/O errors (plain OSError) exit 1.
"""


class GridHedonicError(Exception):
    """Base class for package errors."""


class InvalidInputError(GridHedonicError, ValueError):
    """An operation received structurally invalid input (empty set, bad range)."""


class ConfigurationError(GridHedonicError, ValueError):
    """Inconsistent run configuration: overlapping event windows, bad wave files,
    malformed DGP configs."""


class CapacityError(ConfigurationError):
    """The grid cannot accommodate the requested synthetic wave layout."""


class ConversionError(GridHedonicError, LookupError):
    """A currency conversion rate is missing for a (token, date) pair."""

    def __init__(self, token: str, date) -> None:
        super().__init__(f"no USD rate for token {token} on {date}")
        self.token = token
        self.date = date


class DegenerateDesignError(GridHedonicError, ValueError):
    """The regression design cannot identify the requested coefficients
    (constant treatment, empty 2x2 cell, single Multi stratum)."""


class DegenerateGroupError(DegenerateDesignError):
    """A treatment-assignment group has too few samples for a median split."""


class InsufficientDataError(DegenerateDesignError):
    """Fewer observations than model parameters."""


class NumericalError(GridHedonicError, RuntimeError):
    """An iterative routine failed to converge within its budget."""
