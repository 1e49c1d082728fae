"""Exception types shared across the package."""


class ConvTTSError(Exception):
    """Base class for all errors raised by this package."""


class CorpusLoadError(ConvTTSError):
    """A corpus file is missing or cannot be parsed."""


class CorpusValidationError(ConvTTSError):
    """A conversation violates the corpus schema.

    Carries the diagnostics that triggered the failure so callers can
    report every violation, not just the first.
    """

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class ConfigError(ConvTTSError):
    """A configuration value is inconsistent or out of range."""


class InputError(ConvTTSError):
    """A runtime input violates an operation's precondition."""


class FormatError(ConvTTSError):
    """A binary payload or its sidecar is malformed."""


class AlignmentError(ConvTTSError):
    """A character-to-phoneme alignment is inconsistent with its inputs."""


class NormalizationError(ConvTTSError):
    """A count exceeds its configured normalization maximum."""


class CheckpointError(ConvTTSError):
    """A checkpoint archive is malformed or incompatible with the model."""


class TrainingDivergedError(ConvTTSError):
    """Training produced a non-finite loss."""

    def __init__(self, step, message=None):
        super().__init__(message or f"non-finite loss at step {step}")
        self.step = step
