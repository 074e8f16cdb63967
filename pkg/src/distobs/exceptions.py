"""Exception hierarchy for distobs."""


class DistObsError(Exception):
    """Base class for all errors raised by distobs."""


class DimensionMismatch(DistObsError, ValueError):
    pass


class RankDeficient(DistObsError, ValueError):
    pass


class PreconditionViolated(DistObsError, ValueError):
    """A modelling assumption required by an operation does not hold."""

    def __init__(self, message, assumption=None):
        super().__init__(message)
        self.assumption = assumption


class NotStabilizable(DistObsError, ValueError):
    pass


class UnstableF(DistObsError, ValueError):
    pass


class NotDetectable(PreconditionViolated):
    pass


class InconsistentChecks(DistObsError, RuntimeError):
    """Two routes of the same test disagree; almost always a tolerance bug."""


class Diverged(DistObsError, RuntimeError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ParseError(DistObsError, ValueError):
    def __init__(self, message, location=None):
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)
        self.location = location


class ValidationError(DistObsError, ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class UnknownScenario(DistObsError, KeyError):
    pass
