"""Exception types shared across the package."""


class WeakTrajError(Exception):
    """Base class for all package errors."""


class AmplitudeCollapse(WeakTrajError):
    """The Ermakov amplitude dropped below its positivity floor."""


class StepFailure(WeakTrajError):
    """An adaptive integrator could not meet its local error tolerance."""


class OutOfRange(WeakTrajError):
    """A time was requested outside a trajectory's span."""


class CausticError(WeakTrajError):
    """The propagator was requested at (or too close to) a caustic."""


class SingularRegion(WeakTrajError):
    """The density is below the node floor; velocity and Q are undefined."""


class IncompatiblePostselection(WeakTrajError):
    """Pre- and postselected states give an ill-conditioned weak value."""


class UnassignedRecord(WeakTrajError):
    """A non-vanishing weak value could not be attached to any branch."""


class ConfigError(WeakTrajError):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class ValidationError(ConfigError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
