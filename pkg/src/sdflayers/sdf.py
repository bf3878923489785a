"""Signed distance fields for open layer boundaries.

Two constructions are provided:

``vertical``
    ``d(x, y) = y_curve(x) - y``. Exactly unit slope along every column and a
    zero crossing exactly at the (sub-pixel) curve.
``euclidean``
    Rasterize the curve to one boundary pixel per column, compute the
    Euclidean distance to the nearest boundary pixel (brute force or
    Danielsson's 8-neighbour vector propagation) and sign it by which side of
    that nearest pixel the query lies on. ``polyline`` is the continuous
    variant: distance to the piecewise-linear interpolant of the curve.

Sign convention everywhere: positive above the boundary (smaller ``y``).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sdflayers.grid import LayerCurve, read_grid, write_grid

CONSTRUCTIONS = ("vertical", "euclidean")
EIKONAL_TOL = 1e-6


@dataclass(frozen=True)
class SignedDistanceField:
    values: np.ndarray
    construction: str = "vertical"
    sign_convention: str = "positive_above"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"field must be 2D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if self.construction not in CONSTRUCTIONS:
            raise ValueError(f"unknown construction {self.construction!r}")
        if self.sign_convention != "positive_above":
            raise ValueError("only the positive_above sign convention is supported")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class EikonalReport:
    max_vertical_gradient_error: float
    mean_vertical_gradient_error: float
    violating_fraction: float


def _curve_values(curve, width=None):
    y = curve.y if isinstance(curve, LayerCurve) else np.asarray(curve, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("curve must be one-dimensional")
    if width is not None and y.size != width:
        raise ValueError(f"curve length {y.size} does not match grid width {width}")
    return y


def _shape(shape):
    height, width = (int(s) for s in shape)
    if height < 1 or width < 1:
        raise ValueError(f"bad grid shape {shape}")
    return height, width


def rasterize_curve(curve, shape):
    """Boolean ``(Y, X)`` mask with one boundary pixel per column.

    The row is ``round(y)`` with ties rounded up (1.5 -> 2).
    """
    height, width = _shape(shape)
    y = _curve_values(curve, width)
    if y.min() < 0 or y.max() > height - 1:
        raise ValueError(f"curve leaves the row range [0, {height - 1}]")
    rows = np.floor(y + 0.5).astype(int)
    mask = np.zeros((height, width), dtype=bool)
    mask[rows, np.arange(width)] = True
    return mask


def _boundary_points(mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2D")
    # column-major order so ties resolve to the leftmost boundary pixel
    xs, ys = np.nonzero(mask.T)
    if xs.size == 0:
        raise ValueError("mask has no boundary pixels")
    return ys, xs


def _nearest_boundary(mask, chunk=8192):
    """Index of the nearest boundary pixel and the exact distance, brute force."""
    by, bx = _boundary_points(mask)
    height, width = mask.shape
    py, px = np.divmod(np.arange(height * width), width)
    idx = np.empty(py.size, dtype=int)
    d2 = np.empty(py.size)
    for s in range(0, py.size, chunk):
        dy = py[s:s + chunk, None] - by[None, :]
        dx = px[s:s + chunk, None] - bx[None, :]
        dd = dy * dy + dx * dx
        k = np.argmin(dd, axis=1)
        idx[s:s + chunk] = k
        d2[s:s + chunk] = dd[np.arange(k.size), k]
    return by[idx].reshape(height, width), bx[idx].reshape(height, width), np.sqrt(d2).reshape(height, width)


def _danielsson(mask):
    """8SED: two raster passes propagating nearest-boundary coordinates."""
    height, width = mask.shape
    far = 4 * (height + width) ** 2
    flat = mask.ravel().tolist()
    # flat row-major lists: source row, source column, squared distance
    qy = [i // width if m else -1 for i, m in enumerate(flat)]
    qx = [i % width if m else -1 for i, m in enumerate(flat)]
    d2 = [0 if m else far for m in flat]

    def sweep(y, order, row, cols):
        # offer each pixel of row y the sources held by (row, cols[x])
        base, nb = y * width, row * width
        for x in order:
            i = base + x
            best = d2[i]
            if best == 0:
                continue
            by = bx = -1
            for c in cols[x]:
                sy = qy[nb + c]
                if sy < 0:
                    continue
                sx = qx[nb + c]
                dd = (y - sy) * (y - sy) + (x - sx) * (x - sx)
                if dd < best:
                    best, by, bx = dd, sy, sx
            if by >= 0:
                d2[i], qy[i], qx[i] = best, by, bx

    xs, xs_rev = range(width), range(width - 1, -1, -1)
    above = [[c for c in (x - 1, x, x + 1) if 0 <= c < width] for x in xs]
    below = [[c for c in (x + 1, x, x - 1) if 0 <= c < width] for x in xs]
    left = [[x - 1] if x > 0 else [] for x in xs]
    right = [[x + 1] if x < width - 1 else [] for x in xs]
    for y in range(height):
        if y > 0:
            sweep(y, xs, y - 1, above)
        sweep(y, xs, y, left)
        sweep(y, xs_rev, y, right)
    for y in range(height - 1, -1, -1):
        if y < height - 1:
            sweep(y, xs_rev, y + 1, below)
        sweep(y, xs_rev, y, right)
        sweep(y, xs, y, left)
    return np.sqrt(np.asarray(d2, dtype=np.float64).reshape(height, width))


def unsigned_distance(mask, method="danielsson"):
    """Distance from every pixel to the nearest set pixel of ``mask``.

    Parameters
    ----------
    mask : array_like of bool, shape (Y, X)
        Boundary pixels. Must contain at least one set pixel.
    method : {"danielsson", "exact_bruteforce"}
        ``exact_bruteforce`` minimizes over every boundary pixel;
        ``danielsson`` is the two-pass vector propagation approximation.

    Returns
    -------
    ndarray, shape (Y, X)
        Zero exactly on boundary pixels.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2D")
    if not mask.any():
        raise ValueError("mask has no boundary pixels")
    if method == "exact_bruteforce":
        return _nearest_boundary(mask)[2]
    if method == "danielsson":
        return _danielsson(mask)
    raise ValueError(f"unknown distance method {method!r}")


def sign_field(unsigned, curve):
    """Attach signs to an unsigned distance map of the rasterized ``curve``.

    A pixel is positive when it lies on or above the row of its nearest
    boundary pixel, negative below it.
    """
    unsigned = np.asarray(unsigned, dtype=np.float64)
    if unsigned.ndim != 2:
        raise ValueError("unsigned field must be 2D")
    mask = rasterize_curve(curve, unsigned.shape)
    qy, _, _ = _nearest_boundary(mask)
    rows = np.arange(unsigned.shape[0])[:, None]
    sign = np.where(rows <= qy, 1.0, -1.0)
    return SignedDistanceField(sign * unsigned, construction="euclidean")


def vertical_signed_distance(curve, shape):
    """``d(x, y) = y_curve(x) - y``: unit vertical slope, zero on the curve."""
    height, width = _shape(shape)
    y = _curve_values(curve, width)
    rows = np.arange(height, dtype=np.float64)[:, None]
    return SignedDistanceField(y[None, :] - rows, construction="vertical")


def polyline_signed_distance(curve, shape):
    """Exact Euclidean distance to the piecewise-linear curve, positive above it."""
    height, width = _shape(shape)
    y = _curve_values(curve, width)
    px, py = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    if width == 1:
        dist = np.abs(py - y[0])
    else:
        ax, ay = np.arange(width - 1.0), y[:-1]
        ex, ey = 1.0, np.diff(y)
        seg2 = ex * ex + ey * ey
        best = np.full(px.shape, np.inf)
        for i in range(width - 1):
            t = np.clip(((px - ax[i]) * ex + (py - ay[i]) * ey[i]) / seg2[i], 0.0, 1.0)
            dx = px - (ax[i] + t * ex)
            dy = py - (ay[i] + t * ey[i])
            best = np.minimum(best, dx * dx + dy * dy)
        dist = np.sqrt(best)
    sign = np.where(py <= y[None, :], 1.0, -1.0)
    return SignedDistanceField(sign * dist, construction="euclidean")


def euclidean_signed_distance(curve, shape, method="danielsson"):
    """Rasterize, measure, sign. ``method="polyline"`` skips rasterization."""
    if method == "polyline":
        return polyline_signed_distance(curve, shape)
    mask = rasterize_curve(curve, shape)
    return sign_field(unsigned_distance(mask, method), curve)


def signed_distance(curve, shape, construction="vertical", method="danielsson"):
    if construction == "vertical":
        return vertical_signed_distance(curve, shape)
    if construction == "euclidean":
        return euclidean_signed_distance(curve, shape, method)
    raise ValueError(f"unknown construction {construction!r}")


def check_eikonal(field, tol=EIKONAL_TOL):
    """Deviation of the vertical finite difference magnitude from one."""
    values = field.values if isinstance(field, SignedDistanceField) else np.asarray(field, dtype=np.float64)
    if values.shape[0] < 2:
        raise ValueError("need at least two rows to check the Eikonal property")
    err = np.abs(np.abs(np.diff(values, axis=0)) - 1.0)
    return EikonalReport(
        max_vertical_gradient_error=float(err.max()),
        mean_vertical_gradient_error=float(err.mean()),
        violating_fraction=float(np.mean(err > tol)),
    )


def save_sdf(field, path):
    """Flat-binary values plus a ``.hdr`` text sidecar with the field metadata."""
    path = Path(path)
    write_grid(field.values, path, "flat-binary")
    path.with_suffix(".hdr").write_text(
        f"sign_convention = {field.sign_convention}\nconstruction = {field.construction}\n")


def load_sdf(path):
    path = Path(path)
    meta = {}
    hdr = path.with_suffix(".hdr")
    if hdr.exists():
        for line in hdr.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = v.strip()
    return SignedDistanceField(read_grid(path, "flat-binary"),
                               construction=meta.get("construction", "vertical"),
                               sign_convention=meta.get("sign_convention", "positive_above"))
