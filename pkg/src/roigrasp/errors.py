"""Exception hierarchy shared across the package."""


class GraspError(Exception):
    """Base class for all domain errors raised by roigrasp."""


class NotARectangle(GraspError, ValueError):
    pass


class ParseError(GraspError, ValueError):
    """Malformed input text. ``source`` and ``line`` locate the problem."""

    def __init__(self, message, source=None, line=None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where = f"{source}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class ValidationError(GraspError, ValueError):
    pass


class GraspOutsideRoi(GraspError, ValueError):
    pass


class MissingGrasp(GraspError, ValueError):
    pass


class ShapeMismatch(GraspError, ValueError):
    pass


class InvalidCount(GraspError, ValueError):
    pass


class EmptyCurve(GraspError, ValueError):
    pass


class UnknownCategory(GraspError, KeyError):
    pass


class NoValidDepth(GraspError, ValueError):
    pass


class DegenerateNeighborhood(GraspError, ValueError):
    pass
