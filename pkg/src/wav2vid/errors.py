"""Exception types shared across the package.

Plain ValueError is used for ordinary bad-argument cases; the classes here
exist where callers need to tell failure modes apart.
"""


class ContractViolation(Exception):
    """An input broke a documented contract (e.g. un-normalized symbol power)."""


class ClipFormatError(Exception):
    """Base for clip-file format problems."""


class MalformedHeader(ClipFormatError):
    """Clip file does not start with a valid header."""


class TruncatedPayload(ClipFormatError):
    """Clip file ended before the declared payload was complete."""


class EstimationError(Exception):
    """Pose estimation failed (degenerate landmark configuration)."""


class NumericalError(Exception):
    """A numerical routine left its validity envelope (e.g. eigenvalue < -1e-8)."""


class FramingError(Exception):
    """Symbol stream length disagrees with its declared per-frame budgets."""


class ZeroReferenceError(Exception):
    """A reference signal with zero energy makes the requested ratio undefined."""


class MissingReferenceError(Exception):
    """Generation was asked to run without any cached reference frames."""


class ConfigError(Exception):
    """A run configuration is malformed or breaks a documented invariant."""


class TrainingError(Exception):
    """Training diverged or could not run on the given inputs."""


class PipelineError(Exception):
    """Wraps a component failure with the clip index where it happened."""

    def __init__(self, clip_index: int, cause: Exception):
        self.clip_index = clip_index
        self.cause = cause
        super().__init__(f"clip {clip_index}: {cause}")
