"""Exception hierarchy. Every error is a ``ValueError`` so callers can catch broadly."""


class TreeFormatError(ValueError):
    """Base class for all input/validation errors raised by the package."""


class TreeError(TreeFormatError):
    pass


class TreeParseError(TreeError):
    pass


class OverlappingSons(TreeError):
    pass


class IncompleteUnion(TreeError):
    pass


class SingleSon(TreeError):
    pass


class NonSingletonLeaf(TreeError):
    pass


class IndexOutOfRange(TreeError):
    pass


class InvalidModeCount(TreeError):
    pass


class ShapeMismatch(TreeFormatError):
    pass


class InvalidVertex(TreeFormatError):
    pass


class InvalidRanks(TreeFormatError):
    """A rank tuple is malformed or violates a necessary admissibility condition."""

    def __init__(self, message, vertex=None):
        super().__init__(message)
        self.vertex = vertex
