"""
Error types raised by the numerical library
Commands catch MisspecError and turn it into an error result
"""
from typing import Iterable, Optional


class MisspecError(Exception):
    """Base class for every library failure"""


class IntegrationError(MisspecError):
    """Integrand was not finite at a quadrature node"""

    def __init__(self, message: str, node: Optional[float] = None):
        super().__init__(message)
        self.node = node


class SamplingError(MisspecError):
    """A Monte Carlo value was not finite"""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class AbsoluteContinuityError(MisspecError):
    """p0 puts mass where p* vanishes"""


class InvalidMixingError(MisspecError):
    """Mixing weights or support points are malformed"""


class NonConvexTransformError(MisspecError):
    """Sampled Hellinger transform is not convex"""


class RegimeError(MisspecError):
    """Inputs fall outside the small-distance regime of the KL/Hellinger comparison"""


class ProjectionError(MisspecError):
    """A projection solver failed to reach its tolerance"""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class CertificationError(MisspecError):
    """A cover cell failed margin certification"""

    def __init__(self, message: str, cell=None):
        super().__init__(message)
        self.cell = cell


class ImportanceSamplingError(MisspecError):
    """Importance weights collapsed"""

    def __init__(self, message: str, ess: Optional[float] = None):
        super().__init__(message)
        self.ess = ess


class DegeneratePosteriorError(MisspecError):
    """Every posterior weight underflowed"""


class SamplerTuningError(MisspecError):
    """Metropolis acceptance rate out of the usable range"""

    def __init__(self, message: str, acceptance: Optional[float] = None):
        super().__init__(message)
        self.acceptance = acceptance


class PriorMassError(MisspecError):
    """Prior mass of a neighbourhood could not be estimated"""


class RateFitError(MisspecError):
    """Rate regression has unusable input"""


class ConfigError(MisspecError):
    """Invalid run configuration"""

    def __init__(self, message: str, valid_keys: Iterable[str] = ()):
        self.valid_keys = sorted(valid_keys)
        if self.valid_keys:
            message = f"{message}; valid keys: {', '.join(self.valid_keys)}"
        super().__init__(message)
