"""Scan and layer-curve containers plus their file formats.

Arrays are indexed ``[y, x]``: row 0 is the top of the image and ``y`` grows
downward. A layer curve stores one (sub-pixel) row coordinate per column.

File formats
------------
graymap
    Binary portable graymap (``P5``, maxval 255).
flat-binary (``.osk``)
    16-byte header: magic ``OSK1``, then little-endian u32 width, u32 height,
    u32 dtype code (1 = float32), followed by row-major float32 values.
curve CSV
    Header row ``x,<label>,...``; one row per column.
"""

from __future__ import annotations

import csv
import io
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OSK_MAGIC = b"OSK1"
OSK_DTYPE_F32 = 1
DEFAULT_LABELS = ("ILM", "RPE", "BM")


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


class OrderingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BScan:
    """A 2D intensity image, ``intensities[y, x]``."""

    intensities: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.intensities, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"BScan needs a non-empty 2D grid, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("BScan intensities must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "intensities", a)

    @property
    def height(self):
        return self.intensities.shape[0]

    @property
    def width(self):
        return self.intensities.shape[1]

    def column(self, x):
        """The A-scan at horizontal position ``x``."""
        return self.intensities[:, x]


@dataclass(frozen=True)
class LayerCurve:
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1 or y.size == 0:
            raise ValueError("LayerCurve needs a non-empty 1D vector")
        if not np.all(np.isfinite(y)):
            raise ValueError("LayerCurve values must be finite")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size

    def check_bounds(self, height):
        if self.y.min() < 0 or self.y.max() > height - 1:
            raise ValueError(f"curve leaves the row range [0, {height - 1}]")


@dataclass(frozen=True)
class MultiLayerCurve:
    layers: tuple
    labels: tuple = DEFAULT_LABELS
    ordering_violated: bool = field(default=False, compare=False)

    def __post_init__(self):
        layers = tuple(c if isinstance(c, LayerCurve) else LayerCurve(c) for c in self.layers)
        if not layers:
            raise ValueError("MultiLayerCurve needs at least one layer")
        if len({len(c) for c in layers}) != 1:
            raise ValueError("all layer curves must have the same length")
        labels = tuple(self.labels)
        if len(labels) != len(layers):
            labels = tuple(f"L{i}" for i in range(len(layers)))
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ordering_violated", not is_ordered(self.as_array()))

    @classmethod
    def from_array(cls, arr, labels=DEFAULT_LABELS):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(tuple(LayerCurve(row) for row in arr), labels)

    def as_array(self):
        return np.stack([c.y for c in self.layers])

    @property
    def width(self):
        return len(self.layers[0])

    def __len__(self):
        return len(self.layers)


def is_ordered(curves, min_gap=0.0):
    """True when every layer lies at least ``min_gap`` rows below the previous one."""
    curves = np.asarray(curves)
    if curves.shape[0] < 2:
        return True
    return bool(np.all(np.diff(curves, axis=0) >= min_gap))


def normalize(a):
    """Min-max normalize to [0, 1]; a constant grid maps to zeros."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


# scans --------------------------------------------------------------------


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("graymap", "flat-binary"):
            raise ValueError(f"unknown scan format {fmt!r}")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return "graymap"
    if suffix in (".osk", ".bin"):
        return "flat-binary"
    raise ValueError(f"cannot infer scan format from {path!s}; pass format=")


def _read_pgm(raw):
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated graymap header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary graymap (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("non-integer graymap header field") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 256:
        raise FormatError(f"bad graymap header: {width}x{height}, maxval {maxval}")
    body = raw[pos:]
    if len(body) != width * height:
        raise FormatError(f"graymap body has {len(body)} bytes, header says {width * height}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width) / float(maxval)


def _read_osk(raw):
    if len(raw) < 16 or raw[:4] != OSK_MAGIC:
        raise FormatError("not a flat-binary scan (missing OSK1 magic)")
    width, height, dtype = struct.unpack("<III", raw[4:16])
    if width == 0 or height == 0:
        raise FormatError("flat-binary header has a zero dimension")
    if dtype != OSK_DTYPE_F32:
        raise FormatError(f"unsupported flat-binary dtype code {dtype}")
    body = raw[16:]
    if len(body) != 4 * width * height:
        raise FormatError(f"flat-binary body has {len(body)} bytes, header says {4 * width * height}")
    a = np.frombuffer(body, dtype="<f4").reshape(height, width).astype(np.float64)
    if not np.all(np.isfinite(a)):
        raise FormatError("flat-binary scan contains non-finite values")
    return a


def read_grid(path, format=None):
    """Raw grid values stored in a scan file, without normalization."""
    fmt = _infer_format(path, format)
    raw = Path(path).read_bytes()
    return _read_pgm(raw) if fmt == "graymap" else _read_osk(raw)


def load_scan(path, format=None, normalize_values=True):
    """Read a scan; values are min-max normalized unless ``normalize_values=False``."""
    a = read_grid(path, format)
    return BScan(normalize(a) if normalize_values else a)


def write_grid(a, path, format=None):
    a = np.asarray(a, dtype=np.float64)
    if path is None or str(path) in ("", "."):
        raise ValueError("empty output path")
    fmt = _infer_format(path, format)
    height, width = a.shape
    if fmt == "graymap":
        q = np.clip(np.floor(a * 255.0 + 0.5), 0, 255).astype(np.uint8)
        data = b"P5\n%d %d\n255\n" % (width, height) + q.tobytes()
    else:
        data = OSK_MAGIC + struct.pack("<III", width, height, OSK_DTYPE_F32) + a.astype("<f4").tobytes()
    Path(path).write_bytes(data)


def save_scan(scan, path, format=None):
    """Write a scan. Graymap quantizes to 1/255; flat-binary stores float32."""
    a = scan.intensities if isinstance(scan, BScan) else scan
    write_grid(a, path, format)


# curves -------------------------------------------------------------------


def _fmt(v):
    return repr(float(v))


def _cell(v):
    if isinstance(v, (bool, np.bool_, int, np.integer)):
        return str(int(v))
    return _fmt(v)


def curves_to_csv(curves, labels=None, extra=None):
    """Serialize ``(K, X)`` curves. ``extra`` maps additional column names to vectors."""
    if isinstance(curves, MultiLayerCurve):
        labels = labels or curves.labels
        curves = curves.as_array()
    curves = np.atleast_2d(np.asarray(curves, dtype=np.float64))
    labels = list(labels or DEFAULT_LABELS[:curves.shape[0]])
    extra = extra or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", *labels, *extra])
    for x in range(curves.shape[1]):
        row = [x, *(_fmt(v) for v in curves[:, x])]
        row += [_cell(v[x]) for v in extra.values()]
        w.writerow(row)
    return buf.getvalue()


def save_curves(curves, path, labels=None, extra=None):
    Path(path).write_text(curves_to_csv(curves, labels, extra))


def parse_curves_csv(text, columns=None):
    """Parse curve CSV text into ``(labels, array)``; NaN and ragged rows are rejected."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise FormatError("curve CSV is empty")
    header = [h.strip() for h in rows[0]]
    if header[0] != "x" or len(header) < 2:
        raise FormatError("curve CSV header must start with 'x' and name at least one layer")
    keep = [i for i, h in enumerate(header[1:], 1) if columns is None or h in columns]
    if not keep:
        raise FormatError(f"none of the requested columns {columns} found")
    values = []
    for n, r in enumerate(rows[1:], 2):
        if len(r) != len(header):
            raise FormatError(f"line {n}: expected {len(header)} cells, got {len(r)}")
        try:
            cells = [float(r[i]) for i in keep]
        except ValueError as exc:
            raise FormatError(f"line {n}: non-numeric cell") from exc
        if not all(np.isfinite(cells)):
            raise FormatError(f"line {n}: NaN or infinite cell")
        values.append(cells)
    return [header[i] for i in keep], np.asarray(values, dtype=np.float64).T


def load_curves(path, check_order=True):
    """Load a curve CSV as a :class:`MultiLayerCurve`.

    Ordering violations (a layer above its predecessor) do not fail the load;
    they set ``ordering_violated`` and emit an :class:`OrderingWarning`.
    """
    text = Path(path).read_text()
    extra_cols = {"flag", "flags", "sigma", "mu"}
    header = text.split("\n", 1)[0].split(",")
    layer_cols = [h.strip() for h in header[1:] if h.strip() not in extra_cols and not h.strip().endswith("_flag")]
    labels, arr = parse_curves_csv(text, columns=layer_cols or None)
    mlc = MultiLayerCurve.from_array(arr, labels)
    if check_order and mlc.ordering_violated:
        warnings.warn(f"{path}: layer ordering violated", OrderingWarning, stacklevel=2)
    return mlc
