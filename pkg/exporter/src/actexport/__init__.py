from .errors import ExportError, IoError, LayerNotFound
from .export import ExportManifest, export_confusion, export_run, select_indices

__all__ = [
    "ExportError",
    "ExportManifest",
    "IoError",
    "LayerNotFound",
    "export_confusion",
    "export_run",
    "select_indices",
]

__version__ = "0.1.0"
