"""Exception hierarchy shared by every pipeline stage."""


class GrainpipeError(Exception):
    """Base class for all pipeline failures."""


class FormatError(GrainpipeError):
    """Malformed packed buffer, cube header or payload."""


class DegenerateHistogramError(GrainpipeError):
    """Threshold selection on an image with a single intensity level."""


class InsufficientRegionsError(GrainpipeError):
    pass


class NoDishFoundError(GrainpipeError):
    pass


class EstimationFailedError(GrainpipeError):
    """Robust model fitting could not find a consensus set."""


class ReferenceNotFoundError(GrainpipeError):
    pass


class InvalidReferenceError(GrainpipeError):
    """White level not strictly above the dark level."""


class ChessboardDetectionError(GrainpipeError):
    pass


class InvalidGeometryError(GrainpipeError):
    pass


class MarkerCountError(GrainpipeError):
    def __init__(self, message, found_ids=()):
        super().__init__(message)
        self.found_ids = list(found_ids)


class GridIncompleteError(GrainpipeError):
    pass


class OrientationError(GrainpipeError):
    pass


class TrackingError(GrainpipeError):
    pass


class EmptyMaskError(GrainpipeError):
    pass


class DeadPixelError(GrainpipeError):
    """Every channel of a pixel spectrum reads zero."""
