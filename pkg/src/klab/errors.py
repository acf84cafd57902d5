"""Exception types shared across the package."""


class KlabError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVector(KlabError):
    """A homogeneous coordinate vector was (numerically) zero."""


class ZeroMatrix(KlabError):
    """A matrix expected to be nonzero was (numerically) zero."""


class CoincidentPoints(KlabError):
    """Two points expected to be distinct coincide within tolerance."""


class CoincidentLines(KlabError):
    """Two lines expected to be distinct coincide within tolerance."""


class SingularMatrix(KlabError):
    """A matrix expected to be invertible is singular within tolerance."""


class IdentityElement(KlabError):
    """An operation that needs a non-trivial group element got the identity."""


class EllipticUnsupported(KlabError):
    """Closed-form cyclic limit sets are only defined for non-elliptic elements."""


class InKernel(KlabError):
    """A pseudo-projective map was applied to a point of its kernel."""


class CapExceeded(KlabError):
    """Word-ball enumeration hit the element cap.

    The partial enumeration is attached as ``.partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class BadParameters(KlabError):
    """Gallery parameters outside their documented range."""
