class ConfigurationError(Exception):
    """Raised when a run cannot start because configuration or an external artifact is wrong.

    ``field`` holds the dotted path of the offending config entry when there is one.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, iteration: int, checkpoint: str | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint = checkpoint
