"""Exception hierarchy for the massing pipeline."""


class MassingError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(MassingError):
    """Malformed or mutually inconsistent inputs (dimension mismatch, empty raster, ...)."""


class DegenerateConfigurationError(MassingError):
    """Geometric configuration without a solution (collinear points, singular transform)."""


class DegenerateZoneError(MassingError):
    """A brightness zone too thin or collinear to be fitted with a polygon."""


class EmptyFootprintError(MassingError):
    """No usable roof zones were found inside the footprint."""


class EmptyPartError(MassingError):
    """A roof part lost all of its points or area during cleaning."""


class GeometryError(MassingError):
    """A solid-construction step produced unusable geometry."""


class ProviderError(MassingError):
    """The height-map provider failed or returned an invalid raster."""


class StageError(MassingError):
    """Pipeline stage failure wrapper; carries the stage name and partial artifacts."""

    def __init__(self, stage, cause, artifacts=None):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.artifacts = artifacts or {}
