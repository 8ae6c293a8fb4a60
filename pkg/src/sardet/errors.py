"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these to exit codes: parameter/shape/state errors are usage
problems (1), format errors are data problems (2).
"""


class SardetError(Exception):
    """Base class for all library errors."""


class ParameterError(SardetError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(SardetError, ValueError):
    """Array shapes are incompatible."""


class StateError(SardetError, RuntimeError):
    """An object is used in a state that does not permit the operation."""


class FormatError(SardetError):
    """A file on disk is malformed.

    ``path`` and ``offset`` locate the problem; either may be None when it
    does not apply.
    """

    def __init__(self, message, path=None, offset=None):
        self.path = None if path is None else str(path)
        self.offset = offset
        where = []
        if self.path is not None:
            where.append(self.path)
        if offset is not None:
            where.append(f"byte offset {offset}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.message = message
