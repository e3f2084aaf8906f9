"""Exception types raised across the package."""


class SGMatchError(Exception):
    """Base class for all package errors."""


class MalformedDocument(SGMatchError, ValueError):
    pass


class DanglingEdge(MalformedDocument):
    """An edge references an object id that is not in the document."""


class InvalidThreshold(SGMatchError, ValueError):
    pass


class MalformedVectorFile(SGMatchError, ValueError):
    pass


class DimensionMismatch(MalformedVectorFile):
    pass


class EndpointUnavailable(SGMatchError):
    pass


class UnparsableResponse(SGMatchError):
    pass


class EmptyGraph(SGMatchError):
    """Extraction produced no objects."""


class InsufficientScenes(SGMatchError):
    pass


class DivergedLoss(SGMatchError, FloatingPointError):
    """Training produced a non-finite loss or gradient.

    ``last_good`` holds the model as it was before the failing step.
    """

    def __init__(self, message, step=None, last_good=None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good


class DuplicateSceneId(SGMatchError, ValueError):
    pass


class UnknownSceneId(SGMatchError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyQuerySet(SGMatchError, ValueError):
    pass


class PlacementFailure(SGMatchError):
    pass


class FormatError(SGMatchError, ValueError):
    """Binary checkpoint or store file has the wrong magic, version or shape."""
