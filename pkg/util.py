"""
Util contains the shared enums, physical constants and exceptions,
accessed by all the other modules.
"""

import os
from enum import Enum

# Speed of light in micrometers per picosecond.
SPEED_OF_LIGHT_UM_PER_PS = 299.792458

# Environment variable capping the simulation worker count.
THREADS_ENV = "TOFBEAM_THREADS"


class Fiber(Enum):
    UHNA3 = "uhna3", 4.1, 0.3
    SMF28 = "smf28", 10.4, 0.5
    TEC30 = "tec30", 30.0, 2.0

    def __new__(cls, name, mfd, mfd_sigma):
        """
        Get the preset name and its manufacturer-specified mode-field diameter.

        Override standard enum __new__ method: the value is the short name
        used on the command line, mfd and mfd_sigma ride along as attributes.

        More info about enum - official documentation:
        https://docs.python.org/3/library/enum.html
        mfd: mode-field diameter in micrometers
        mfd_sigma: manufacturer tolerance in micrometers
        """
        obj = object.__new__(cls)
        obj._value_ = name
        obj.mfd = mfd
        obj.mfd_sigma = mfd_sigma
        return obj

    # Every preset is specified at the telecom wavelength.
    @property
    def wavelength(self):
        return 1.55


class DbrOrdering(Enum):
    """
    Which DBR material sits next to the absorber (the side light comes from).
    """
    HIGH_INDEX_FIRST = "high"
    LOW_INDEX_FIRST = "low"


class TofbeamError(Exception):
    """
    Base class of all errors raised by this package.
    exit_code is what the command line returns when the error reaches it.
    """
    exit_code = 1


class ValidationError(TofbeamError, ValueError):
    exit_code = 2


class ConfigurationError(ValidationError):
    pass


class MalformedInputError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NoToleranceError(ValidationError):
    """
    Aligned loss already exceeds the loss budget, so no offset is tolerable.
    """


class NumericalFailure(TofbeamError, ArithmeticError):
    exit_code = 3


class FitError(NumericalFailure):
    pass


def worker_count(requested=None):
    """
    Return how many workers the simulation may use.

    requested: explicit number of workers (e.g. from a test), otherwise
    the CPU count. Both are capped by the TOFBEAM_THREADS variable.
    """
    count = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            count = min(count, int(cap))
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {cap!r}")
    return max(count, 1)
