"""Error taxonomy shared across the package.

Exit-code mapping used by the CLI: configuration errors -> 2,
numerical / resolution errors -> 3, verification failures -> 1.
"""


class MorseflowError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MorseflowError):
    exit_code = 2


class VerificationError(MorseflowError):
    exit_code = 1


class NumericalError(MorseflowError):
    exit_code = 3


class InvalidPointError(NumericalError):
    """Point violates the manifold constraint beyond tolerance."""


class IntegratorError(NumericalError):
    """Adaptive step-size underflow or related integration failure."""


class ConvergenceTimeout(NumericalError):
    """No convergence to a critical point within max_time."""


class DegeneracyError(NumericalError):
    """A critical point has an eigenvalue inside the degeneracy band."""


class RegularValueError(ConfigurationError):
    """The requested level is (numerically) a critical value."""


class MorseSmaleViolation(NumericalError):
    """A trajectory from a descending sphere reached an index >= source."""


class ResolutionError(NumericalError):
    """Results unstable under mesh/grid refinement."""


class TransportError(NumericalError):
    """Frame transport became degenerate along a trajectory."""


class ShootingError(NumericalError):
    """Disk sampling failed to reach the target level set."""


class CoverageError(NumericalError):
    """A sampled entrance time was infinite: invariance/coverage failure."""


class BasisError(NumericalError):
    """A comparison isomorphism came out non-invertible."""


class RasterizationError(NumericalError):
    """A geometric chain could not be expressed on the grid complex."""


class InputError(ConfigurationError):
    """Inconsistent registries, generator mismatch, or malformed input."""
