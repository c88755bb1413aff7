"""Exception and warning types raised across the package."""


class BTCError(Exception):
    """Base class for every error raised by this package."""

    code = "error"

    def to_record(self) -> dict:
        return {"error": self.code, "type": type(self).__name__, "message": str(self)}


class MissingKey(BTCError, KeyError):
    code = "missing_key"

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return Exception.__str__(self)


class DomainError(BTCError, ValueError):
    code = "domain"


class StepSizeUnderflow(BTCError, RuntimeError):
    code = "step_size_underflow"


class NotAFixedPoint(BTCError, ValueError):
    code = "not_a_fixed_point"


class TooShort(BTCError, ValueError):
    code = "too_short"


class SizeLimit(BTCError, ValueError):
    code = "size_limit"


class DimensionMismatch(BTCError, ValueError):
    code = "dimension_mismatch"


class InsufficientRange(BTCError, ValueError):
    code = "insufficient_range"


class InsufficientData(BTCError, ValueError):
    code = "insufficient_data"


class NoPeak(BTCError, ValueError):
    code = "no_peak"


class EmptyDataset(BTCError, ValueError):
    code = "empty_dataset"


class PositivityBreach(UserWarning):
    """Density matrix picked up an eigenvalue below the positivity tolerance."""


class DegenerateZero(UserWarning):
    """More than one Liouvillian eigenvalue is numerically zero."""
