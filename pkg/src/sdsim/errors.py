"""Exception hierarchy shared by the simulator modules."""


class SimError(Exception):
    pass


class ConfigError(SimError, ValueError):
    pass


class WorkloadError(SimError, ValueError):
    pass


class ParseError(WorkloadError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class AllocationError(SimError):
    """Raised when a placement asks for cores that are not available."""


class StateError(SimError):
    """Raised on corrupted allocation or ownership bookkeeping."""


class ModelError(SimError, ValueError):
    pass
