"""Exception types raised across the package."""


class NNGPError(Exception):
    """Base class for errors raised by this package."""


class DuplicateLocation(NNGPError, ValueError):
    """Two input locations share identical coordinates."""


class NonPositiveConditionalVariance(NNGPError, ArithmeticError):
    """A factor row produced a conditional variance at or below the floor."""

    def __init__(self, row, value):
        self.row = row
        self.value = value
        super().__init__(
            f"conditional variance {value!r} at ordered position {row} is not "
            "positive; the kernel is ill-conditioned for this geometry"
        )


class NonFiniteLikelihood(NNGPError, ArithmeticError):
    """The objective is not finite at the optimizer's starting point."""


class SingularDesign(NNGPError, ArithmeticError):
    """The (decorrelated) design matrix is rank deficient."""


class NotPositiveDefinite(NNGPError, ArithmeticError):
    """A precision matrix failed its positive-definiteness check."""

    def __init__(self, eigenvalue):
        self.eigenvalue = eigenvalue
        super().__init__(
            f"precision matrix is not positive definite: smallest eigenvalue {eigenvalue:.3e}"
        )
