"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage and data errors exit 1,
numerical failures exit 2, reproducibility contract violations exit 3.
"""


class RegfloodError(Exception):
    """Base class for all package errors."""


class InputError(RegfloodError):
    """Invalid arguments, malformed files, or data that violates a precondition."""


class InsufficientDataError(InputError):
    """Too few observations for the requested operation."""


class DegenerateSampleError(InputError):
    """Sample has no usable variability (constant values, singular statistics)."""


class NumericalError(RegfloodError):
    """A numerical routine failed to produce a usable result."""


class FitError(NumericalError):
    """Parameter estimation did not converge or left the parameter region."""


class SelectionError(NumericalError):
    """No candidate satisfied a selection rule (e.g. threshold choice)."""


class ElicitationError(NumericalError):
    """Prior construction failed (degenerate donors, missing fits)."""


class ContractViolationError(RegfloodError):
    """A reproducibility or leave-target-out contract was broken."""
