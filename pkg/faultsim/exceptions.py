class FaultSimError(Exception):
    """Base for all exceptions raised in faultsim"""

    pass


class InvalidSpecError(FaultSimError):
    """Geometry or parameter specification is inconsistent. For example
    subdomains that do not stack, or a fault that does not exist
    """

    pass


class ConfigError(FaultSimError):
    """A scenario config could not be read or did not validate"""

    pass


class ConvergenceError(FaultSimError):
    """An iterative solver exceeded its iteration cap

    The report collected up to the point of failure is kept in `report`, so
    callers can decide what to do with a partial result.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StepFailureError(FaultSimError):
    """Adaptive time stepping could not find an acceptable step size"""

    pass


class CheckpointError(FaultSimError):
    """A checkpoint file could not be read or does not match the model"""

    pass
