class ExportError(Exception):
    """Base for everything this package raises on purpose."""


class LayerNotFound(ExportError):
    def __init__(self, name, known):
        self.name = name
        preview = ", ".join(sorted(known)[:8])
        super().__init__(f"no module named {name!r}; model has: {preview}")


class IoError(ExportError):
    """A write failed; wraps the underlying OSError."""
