"""Exception types shared by the backend modules."""


class DymandError(ValueError):
    """Base class for every domain error the CLI reports with exit code 1"""


class DomainError(DymandError):
    """Input outside an operation's domain (non-positive distance, wrong sample count...)"""


class InvalidTransition(DymandError):
    def __init__(self, phase, event_kind):
        super().__init__(f"Invalid transition: {event_kind} while {phase}")
        self.phase = phase
        self.event_kind = event_kind


class TrainingError(DymandError):
    pass


class UndefinedMetricError(DymandError):
    pass


class SchemaError(DymandError):
    pass


class LogParseError(DymandError):
    def __init__(self, line_no: int, message: str, path: str = None):
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"{where}: {message}")
        self.line_no = line_no
        self.path = path


class RoutingError(DymandError):
    pass


class AudioFormatError(DymandError):
    pass
