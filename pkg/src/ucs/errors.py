"""Exception hierarchy.

Input errors derive from :class:`InputError`; numerical hard failures derive
from :class:`NumericalError`. The CLI maps the two families to exit codes 2
and 3 respectively.
"""


class UCSError(Exception):
    """Base class for every error raised by the package."""


class InputError(UCSError, ValueError):
    """The caller supplied something that violates a documented contract."""


class NumericalError(UCSError, ArithmeticError):
    """A computation could not be completed to the required accuracy."""


class ShapeMismatch(InputError):
    pass


class NonFinite(InputError):
    pass


class NonSquarePermutationTarget(InputError):
    pass


class NonPositivePrecision(InputError):
    pass


class NonPositiveVariance(InputError):
    pass


class ZeroSignal(InputError):
    pass


class ZeroReference(InputError):
    pass


class NotAPermutation(InputError):
    pass


class BlockSizeMismatch(InputError):
    pass


class ConfigError(InputError):
    pass


class DegenerateDerivative(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class QuadratureNotConverged(NumericalError):
    pass
