"""Exception hierarchy.

Every error raised on bad input derives from :class:`ShrinkageError`, which
is itself a ``ValueError`` so callers that only care about "bad input" can
catch the builtin.
"""


class ShrinkageError(ValueError):
    code = "invalid-input"


class InvalidInput(ShrinkageError):
    code = "invalid-input"


class InvalidDescriptor(ShrinkageError):
    code = "invalid-descriptor"


class UnsupportedFamily(ShrinkageError):
    code = "unsupported-family"


class InvalidFamily(ShrinkageError):
    code = "invalid-family"


class DomainError(ShrinkageError):
    code = "domain-error"


class DegenerateRange(ShrinkageError):
    code = "degenerate-range"


class InvalidBandwidth(ShrinkageError):
    code = "invalid-bandwidth"


class InsufficientData(ShrinkageError):
    code = "insufficient-data"


class DegenerateData(ShrinkageError):
    code = "degenerate-data"


class InvalidGrid(ShrinkageError):
    code = "invalid-grid"


class NumericalFailure(ShrinkageError):
    code = "numerical-failure"


class ExtremeInputWarning(RuntimeWarning):
    """All kernel weights underflowed; a fallback value was returned."""
