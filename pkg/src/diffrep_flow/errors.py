"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its documented range."""


class ScheduleOrderError(ParameterError):
    """Noise levels passed in the wrong order (needs sigma_prev < sigma_t)."""


class ModelError(ValueError):
    """A density or score model is malformed or unknown."""


class ConfigError(ValueError):
    """Run configuration rejected; message names the offending key."""


class DivergenceError(RuntimeError):
    """A trajectory produced non-finite state; message carries the step index."""


class SolverDivergenceError(RuntimeError):
    """The per-step least-squares solver hit a non-finite objective."""

    def __init__(self, message: str, iterations_run: int):
        super().__init__(message)
        self.iterations_run = iterations_run


class RemoteTransportError(RuntimeError):
    """Could not reach the remote noise-predictor endpoint."""


class RemoteProtocolError(RuntimeError):
    """The remote endpoint answered with an error or a malformed body."""


class RemoteShapeError(RuntimeError):
    """The remote endpoint returned a batch of the wrong shape."""
