"""Exception types raised by the simulator."""


class ChemflowError(Exception):
    """Base class for all package errors."""


class NonFiniteError(ChemflowError, ValueError):
    """A field contains NaN or Inf."""


class ConfigError(ChemflowError, ValueError):
    """Invalid run configuration. ``problems`` lists every violated key."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class BlowupSuspected(ChemflowError):
    """The stepper could not produce a valid state after repeated step halving."""

    def __init__(self, message, last_record=None, state=None):
        super().__init__(message)
        self.last_record = last_record
        self.state = state


class PicardDivergence(ChemflowError):
    """Picard iteration failed to contract."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InvariantViolation(ChemflowError):
    """A monitored invariant tripped after a completed run."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])
