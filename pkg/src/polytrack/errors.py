"""Exception hierarchy.

Every error raised on bad input derives from :class:`PolytrackError`, which is
itself a ``ValueError`` so generic callers can catch either.
"""


class PolytrackError(ValueError):
    """Base class for all data errors raised by polytrack."""


class EmptyMask(PolytrackError):
    pass


class DegenerateComponent(PolytrackError):
    pass


class DegenerateContour(PolytrackError):
    pass


class DegenerateBox(PolytrackError):
    pass


class SingularTransform(PolytrackError):
    pass


class TooFewPoints(PolytrackError):
    pass


class SizeMismatch(PolytrackError):
    pass


class ShapeMismatch(PolytrackError):
    pass


class EmptySet(PolytrackError):
    pass


class NoVisiblePoints(PolytrackError):
    pass


class TooFewFrames(PolytrackError):
    pass


class NoControls(PolytrackError):
    pass


class CanvasTooSmall(PolytrackError):
    pass


class EmptyFrames(PolytrackError):
    pass


class BadInit(PolytrackError):
    pass


class ParseError(PolytrackError):
    pass


class SchemaError(PolytrackError):
    pass


class UnsupportedFormat(PolytrackError):
    pass
