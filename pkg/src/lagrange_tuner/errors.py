"""Exception hierarchy shared across the package."""


class LagrangeTunerError(Exception):
    pass


class InvalidCurveError(LagrangeTunerError, ValueError):
    """An RD curve violates its construction invariants."""


class BackendUnavailable(LagrangeTunerError):
    """The encoder (or scaler) needed for a job is not installed or not configured."""


class EncodeFailure(LagrangeTunerError):
    """The encoder ran but exited non-zero or produced an unparsable log."""

    def __init__(self, message: str, output: str = ""):
        super().__init__(message)
        self.output = output


class UnsupportedCapability(LagrangeTunerError):
    """A k != 1 encode was requested from a binary without the multiplier option."""


class ModelVersionMismatch(LagrangeTunerError):
    pass


class ManifestError(LagrangeTunerError, ValueError):
    pass


class TimingError(LagrangeTunerError):
    """Speedup measurement would mix cached and freshly measured encode times."""
