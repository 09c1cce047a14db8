"""Exception types shared across the package."""


class UnposeError(Exception):
    """Base class for all errors raised by this package."""


class StreamError(UnposeError):
    """The input stream itself could not be read or decoded."""


class TopologyMismatchError(UnposeError):
    """A record, config, or model was combined with the wrong topology."""


class FingerprintMismatchError(UnposeError):
    """Stored feature-config fingerprints disagree with recomputed ones."""


class BundleVersionError(UnposeError):
    """The bundle file declares a version this loader does not recognize."""


class CorruptBundleError(UnposeError):
    """The bundle file is truncated, malformed, or fails its checksum."""


class TrainingDivergedError(UnposeError):
    """Autoencoder training produced a non-finite loss."""

    def __init__(self, message: str, last_good_epoch: int, loss_trace: list):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
        self.loss_trace = loss_trace


class StageError(UnposeError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
