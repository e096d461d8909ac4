class NVSimError(Exception):
    """Base class for every error raised by the simulator"""


class InvariantError(NVSimError, ValueError):
    """A domain value was constructed with fields that break its invariants"""


class ConfigError(NVSimError):
    """Configuration file or constants table is invalid"""


class UsageError(NVSimError):
    """Command-line arguments are inconsistent (bad ranges, zero shots, ...)"""


class ParseError(NVSimError):
    """Pulse program text could not be parsed"""

    def __init__(self, line, column, message):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"{line}:{column}: {message}")


class ModelError(NVSimError):
    """Runtime failure inside one of the physical models"""


class IntegrationError(ModelError):
    pass


class NoSteadyStateError(ModelError):
    pass


class ExecutionError(ModelError):
    pass


class SeedStreamError(ModelError):
    pass


class DeductionError(ModelError):
    pass


class FitError(ModelError):
    pass


# exit codes used by nvsim.py
EXIT_OK = 0
EXIT_MODEL_ERROR = 1
EXIT_USAGE_ERROR = 2


def exit_code_for(exc):
    """Map an exception to the process exit code"""
    if isinstance(exc, (UsageError, ParseError, ConfigError)):
        return EXIT_USAGE_ERROR
    return EXIT_MODEL_ERROR
