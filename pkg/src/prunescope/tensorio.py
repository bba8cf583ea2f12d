"""Binary array interchange: validated NPY files and the run-directory layout.

All arrays travel as NPY v1.0/v2.0 files restricted to little-endian,
C-contiguous f4/f8 (activations, matrices) and i4/i8 (labels). 32-bit
inputs are widened to the toolkit's 64-bit working precision on load.
A multi-layer run is a directory::

    <run>/manifest.json             layer names in network order
    <run>/<layer>/activations.npy   N x C x H x W
    <run>/labels.npy                N integer labels
    <run>/logits.npy                optional N x Y logits

Loaded values are validated once and frozen (writeable=False), so they are
safe for concurrent read access.
"""

import ast
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IoError,
    MalformedFile,
    NonFiniteData,
    ShapeMismatch,
    UnsupportedDtype,
)
from . import jsonio

MAGIC = b"\x93NUMPY"
FLOAT_DESCRS = ("<f4", "<f8")
INT_DESCRS = ("<i4", "<i8")

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class LabelScheme:
    """A label granularity: 'fine' or 'coarse' with its class count."""

    granularity: str
    num_classes: int
    name: str

    def __post_init__(self):
        if self.granularity not in ("fine", "coarse"):
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if self.num_classes < 2:
            raise ValueError("a label scheme needs at least 2 classes")

    def to_obj(self):
        return {
            "granularity": self.granularity,
            "num_classes": self.num_classes,
            "name": self.name,
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(obj["granularity"], int(obj["num_classes"]), obj["name"])


@dataclass(frozen=True)
class ActivationSet:
    """One layer's feature maps (N x C x H x W float64) plus integer labels."""

    data: np.ndarray
    labels: np.ndarray
    num_classes: int = field(default=0)

    def __post_init__(self):
        data, labels = self.data, self.labels
        if data.ndim != 4 or min(data.shape) < 1:
            raise ShapeMismatch(
                f"activations must be rank-4 with positive dims, got {data.shape}"
            )
        if labels.ndim != 1 or labels.shape[0] != data.shape[0]:
            raise ShapeMismatch(
                f"labels length {labels.shape} does not match N={data.shape[0]}"
            )
        if not np.isfinite(data).all():
            raise NonFiniteData("activations contain NaN or Inf")
        if labels.size and labels.min() < 0:
            raise MalformedFile("labels contain negative values")
        declared = self.num_classes
        least = int(labels.max()) + 1 if labels.size else 0
        if declared == 0:
            object.__setattr__(self, "num_classes", least)
        elif declared < least:
            raise MalformedFile(
                f"label {least - 1} exceeds declared class count {declared}"
            )
        data.flags.writeable = False
        labels.flags.writeable = False

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[1]

    @property
    def spatial(self):
        return self.data.shape[2] * self.data.shape[3]


@dataclass(frozen=True)
class LogitSet:
    """N x Y logits with their true labels."""

    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.logits.ndim != 2:
            raise ShapeMismatch(f"logits must be rank-2, got {self.logits.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.logits.shape[0]:
            raise ShapeMismatch("logits row count does not match label count")
        if not np.isfinite(self.logits).all():
            raise NonFiniteData("logits contain NaN or Inf")
        self.logits.flags.writeable = False
        self.labels.flags.writeable = False


def _read_header(fh, path):
    start = fh.read(len(MAGIC))
    if start != MAGIC:
        raise MalformedFile("bad magic; not an NPY file", path=str(path))
    version = fh.read(2)
    if len(version) < 2:
        raise MalformedFile("truncated version field", path=str(path))
    major, minor = version[0], version[1]
    if (major, minor) not in ((1, 0), (2, 0)):
        raise MalformedFile(
            f"unsupported NPY version {major}.{minor}", path=str(path)
        )
    if major == 1:
        raw = fh.read(2)
        if len(raw) < 2:
            raise MalformedFile("truncated header length", path=str(path))
        (hlen,) = struct.unpack("<H", raw)
    else:
        raw = fh.read(4)
        if len(raw) < 4:
            raise MalformedFile("truncated header length", path=str(path))
        (hlen,) = struct.unpack("<I", raw)
    header = fh.read(hlen)
    if len(header) < hlen:
        raise MalformedFile("truncated header", path=str(path))
    try:
        meta = ast.literal_eval(header.decode("latin1"))
        descr = meta["descr"]
        fortran = meta["fortran_order"]
        shape = tuple(int(d) for d in meta["shape"])
    except Exception:
        raise MalformedFile("unparseable NPY header", path=str(path)) from None
    if fortran:
        raise MalformedFile("Fortran-order files are not supported", path=str(path))
    if not isinstance(descr, str) or (descr.startswith(">") and len(descr) == 3):
        raise MalformedFile(f"big-endian descr {descr!r}", path=str(path))
    if descr not in FLOAT_DESCRS + INT_DESCRS:
        raise UnsupportedDtype(f"unsupported element type {descr!r}", path=str(path))
    return descr, shape


def load_array(path):
    """Read one validated NPY file; f4/i4 are widened to f8/i8."""
    if not os.path.isfile(path):
        raise IoError(f"no such file: {path}", path=str(path))
    with open(path, "rb") as fh:
        descr, shape = _read_header(fh, path)
        payload = fh.read()
    dtype = np.dtype(descr)
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise MalformedFile(
            f"payload is {len(payload)} bytes, header promises {expected}",
            path=str(path),
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if descr in FLOAT_DESCRS:
        return np.ascontiguousarray(arr, dtype=np.float64)
    return np.ascontiguousarray(arr, dtype=np.int64)


def _write_array(arr, path):
    arr = np.ascontiguousarray(arr)
    descr = arr.dtype.str
    header = (
        "{'descr': '%s', 'fortran_order': False, 'shape': %r, }"
        % (descr, tuple(int(d) for d in arr.shape))
    )
    # Pad so that magic + version + length + header is 64-byte aligned.
    unpadded = len(MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * (-unpadded % 64) + "\n"
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(bytes((1, 0)))
            fh.write(struct.pack("<H", len(header)))
            fh.write(header.encode("latin1"))
            fh.write(arr.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}", path=str(path)) from exc


def save_matrix(m, path):
    """Persist a finite 2-D matrix; float goes out as f8, integer as i8."""
    m = np.asarray(m)
    if m.ndim != 2 or min(m.shape) < 1:
        raise MalformedFile(f"matrix must be 2-D with positive dims, got {m.shape}")
    if np.issubdtype(m.dtype, np.integer):
        _write_array(m.astype(np.int64), path)
        return
    if not np.isfinite(m).all():
        raise NonFiniteData("matrix contains NaN or Inf")
    _write_array(m.astype(np.float64), path)


def load_matrix(path):
    m = load_array(path)
    if m.ndim != 2 or min(m.shape) < 1:
        raise MalformedFile(f"expected a 2-D matrix, got shape {m.shape}", path=str(path))
    if np.issubdtype(m.dtype, np.floating) and not np.isfinite(m).all():
        raise NonFiniteData("matrix contains NaN or Inf", path=str(path))
    return m


def load_labels(path, n=None):
    labels = load_array(path)
    if not np.issubdtype(labels.dtype, np.integer):
        raise UnsupportedDtype("labels must be an integer array", path=str(path))
    if labels.ndim != 1:
        raise ShapeMismatch(f"labels must be rank-1, got {labels.shape}", path=str(path))
    if n is not None and labels.shape[0] != n:
        raise ShapeMismatch(
            f"labels length {labels.shape[0]} does not match N={n}", path=str(path)
        )
    return labels


def load_activations(path, labels_path=None, num_classes=0):
    """Load <layer>/activations.npy plus its companion labels file.

    By convention the labels live at ``<run>/labels.npy`` one directory up;
    pass ``labels_path`` to override.
    """
    data = load_array(path)
    if not np.issubdtype(data.dtype, np.floating):
        raise UnsupportedDtype("activations must be a float array", path=str(path))
    if data.ndim != 4:
        raise ShapeMismatch(f"activations must be rank-4, got {data.shape}", path=str(path))
    if labels_path is None:
        labels_path = os.path.join(os.path.dirname(os.path.dirname(path)), "labels.npy")
    labels = load_labels(labels_path, n=data.shape[0])
    return ActivationSet(data, labels, num_classes)


def save_activations(acts, path):
    _write_array(np.asarray(acts.data, dtype=np.float64), path)


def save_labels(labels, path):
    _write_array(np.asarray(labels, dtype=np.int64), path)


def read_manifest(run_dir):
    path = os.path.join(run_dir, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise MalformedFile(f"run has no {MANIFEST_NAME}", path=str(run_dir))
    try:
        manifest = jsonio.load(path)
    except ValueError as exc:
        raise MalformedFile(f"unparseable manifest: {exc}", path=str(path)) from exc
    layers = manifest.get("layers")
    if not isinstance(layers, list) or not layers:
        raise MalformedFile("manifest must list at least one layer", path=str(path))
    return manifest


def load_run_layer(run_dir, layer, num_classes=0):
    return load_activations(
        os.path.join(run_dir, layer, "activations.npy"),
        labels_path=os.path.join(run_dir, "labels.npy"),
        num_classes=num_classes,
    )


def load_run_logits(run_dir):
    logits = load_array(os.path.join(run_dir, "logits.npy"))
    if not np.issubdtype(logits.dtype, np.floating):
        raise UnsupportedDtype("logits must be a float array")
    labels = load_labels(os.path.join(run_dir, "labels.npy"))
    return LogitSet(logits, labels)
