"""Exception hierarchy shared by all prunescope modules.

Every error carries a machine-readable ``kind`` (its class name) and an
optional ``context`` dict so the CLI can emit structured error objects.
``DataError`` subclasses map to exit code 3, ``NumericalError`` subclasses
to exit code 4.
"""


class PrunescopeError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = {k: v for k, v in context.items() if v is not None}

    @property
    def kind(self):
        return type(self).__name__

    def to_obj(self):
        obj = {"error": self.kind, "message": str(self)}
        if self.context:
            obj["context"] = self.context
        return obj


class DataError(PrunescopeError):
    """Invalid file contents, shapes, labels, or parameters."""


class NumericalError(PrunescopeError):
    """Linear-algebra or dimensional failures."""


class IoError(DataError):
    pass


class MalformedFile(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NonFiniteData(DataError):
    pass


class UnsupportedDtype(DataError):
    pass


class DegenerateClass(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class InvalidClusterCount(DataError):
    pass


class InvalidRatio(DataError):
    pass


class InvalidAlpha(DataError):
    pass


class InvalidSpec(DataError):
    pass


class MissingReport(DataError):
    pass


class SchemeMismatch(DataError):
    pass


class LinearAlgebraFailure(NumericalError):
    pass


class InsufficientDimension(NumericalError):
    pass
