"""Exception hierarchy shared across the toolkit."""


class LenslessIdError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(LenslessIdError):
    """Non-finite or otherwise unusable parameter values."""


class GeometryError(LenslessIdError):
    """Incompatible physical geometry between rasters/kernels."""


class OutOfFovError(LenslessIdError):
    """Projected content falls entirely outside the field of view."""


class IngestionError(LenslessIdError):
    """A dataset file could not be read or is inconsistent with its manifest."""


class ContractError(LenslessIdError):
    """An operation was called outside its contract (shapes, norms, batch sizes)."""


class SpecError(LenslessIdError):
    """A network layer specification is malformed or shape-inconsistent."""


class TrainingDivergedError(LenslessIdError):
    """Training produced a non-finite loss."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class SingularOperatorError(LenslessIdError):
    """The forward operator cannot be inverted (e.g. an all-zero PSF)."""


class IntegrityError(LenslessIdError):
    """A serialized artifact is corrupt or truncated."""


class VersioningError(LenslessIdError):
    """A serialized artifact does not match the expected schema/config."""


class ConfigError(LenslessIdError):
    """Invalid or incomplete run configuration."""
