"""Exception types raised across the package."""


class PSFError(Exception):
    """Base class for all errors raised by :mod:`psf`."""


class EmptySet(PSFError):
    pass


class Unbounded(PSFError):
    pass


class NotConverged(PSFError):
    pass


class EmptyInvariantSet(PSFError):
    pass


class SamplingFailed(PSFError):
    pass


class NotPositiveDefinite(PSFError):
    pass


class Unstable(PSFError):
    pass


class NonFinite(PSFError):
    pass


class Infeasible(PSFError):
    pass


class DegenerateSpeed(PSFError):
    pass


class NoSteadyState(PSFError):
    pass


class DesignInfeasible(PSFError):
    """Offline design produced an empty set or failed a certificate.

    ``certificate`` names the failing check, e.g. ``"omega_x[3] nonempty"``.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class WarmstartInfeasible(PSFError):
    def __init__(self, message, step=None, violation=None):
        super().__init__(message)
        self.step = step
        self.violation = violation


class InitialInfeasible(PSFError):
    pass


class ConfigError(PSFError):
    pass
