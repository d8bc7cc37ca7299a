"""Exception hierarchy. CLI maps ``ConfigError`` to exit 2, everything else to 3."""


class SemHideError(Exception):
    pass


class ConfigError(SemHideError, ValueError):
    pass


class ShapeError(SemHideError, ValueError):
    pass


class IngestionError(SemHideError):
    pass


class ChannelError(SemHideError, ValueError):
    pass


class ScheduleError(SemHideError, ValueError):
    pass


class CheckpointError(SemHideError):
    pass


class TrainingDivergedError(SemHideError):
    """Raised when a loss term becomes non-finite; ``term`` names the culprit."""

    def __init__(self, term: str, step: int, value: float):
        self.term = term
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss term {term!r} at step {step}: {value}")
