"""Exception hierarchy.  ``exit_code`` is what the CLI returns."""


class DuctControlError(Exception):
    exit_code = 3


class ConfigurationError(DuctControlError):
    exit_code = 2


class InvalidParameterError(ConfigurationError, ValueError):
    pass


class DomainError(DuctControlError, ValueError):
    pass


class UnsupportedError(DuctControlError, ValueError):
    pass


class CompatibilityError(DuctControlError):
    pass


class FlowBlowupError(DuctControlError):
    """A characteristic left Omega_3 by more than one grid spacing."""


class FlushViolationError(DuctControlError):
    pass


class CancellationError(DuctControlError):
    pass


class NoContractionError(DuctControlError):
    pass


class VerificationError(DuctControlError):
    exit_code = 4
