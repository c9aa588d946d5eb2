"""Exception types shared across the package.

The CLI maps each category to a distinct nonzero exit code, so library code
should raise the most specific type that applies. Plain ``ValueError`` is
used for invalid arguments throughout (aliased here for CLI dispatch).
"""


class NumericFailure(ArithmeticError):
    """A computation produced NaN/Inf or otherwise lost numeric validity."""


class FormatError(ValueError):
    """A byte stream or config file does not match its declared format."""


class ProtocolError(RuntimeError):
    """Aggregation protocol misuse: mismatched rings, missing shares, overflow."""


#: (exception class, CLI exit code, category label) in dispatch order.
EXIT_CODES = (
    (FormatError, 3, "format-error"),
    (ProtocolError, 4, "protocol-error"),
    (NumericFailure, 5, "numeric-failure"),
    (ValueError, 2, "invalid-argument"),
    (OSError, 6, "io-error"),
)
