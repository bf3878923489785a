"""Gaussian predictive fields and curves, their losses, and field-to-curve
uncertainty propagation.

All losses are sums over elements in a fixed order, so repeated evaluation is
bit-identical.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sdflayers.boundary import ExtractionConfig, extract
from sdflayers.grid import FormatError, LayerCurve
from sdflayers.sdf import SignedDistanceField

LOG_2PI = float(np.log(2.0 * np.pi))
DEFAULT_DELTA = 29.0


@dataclass(frozen=True)
class ClampConfig:
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("clamp delta must be positive")


@dataclass(frozen=True)
class ProbabilisticSDF:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.shape != sigma.shape:
            raise ValueError(f"mu {mu.shape} and sigma {sigma.shape} shapes differ")
        if not np.all(sigma > 0):
            raise ValueError("sigma must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class ProbabilisticCurve:
    mu: np.ndarray
    sigma: np.ndarray
    flags: np.ndarray = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        flags = np.zeros(mu.shape, dtype=bool) if self.flags is None else np.asarray(self.flags, dtype=bool)
        if not (mu.shape == sigma.shape == flags.shape) or mu.ndim != 1:
            raise ValueError("mu, sigma and flags must be equal-length vectors")
        if not np.all(sigma > 0):
            raise ValueError("sigma must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "flags", flags)

    def __len__(self):
        return self.mu.size

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "mu", "sigma", "flag"])
        for x, (m, s, f) in enumerate(zip(self.mu, self.sigma, self.flags)):
            w.writerow([x, repr(float(m)), repr(float(s)), int(f)])
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path):
        rows = list(csv.reader(io.StringIO(Path(path).read_text())))
        if not rows or rows[0] != ["x", "mu", "sigma", "flag"]:
            raise FormatError("probabilistic curve CSV needs header x,mu,sigma,flag")
        body = np.array([[float(c) for c in r[1:]] for r in rows[1:] if r])
        return cls(body[:, 0], body[:, 1], body[:, 2].astype(bool))


def _arr(v):
    if isinstance(v, SignedDistanceField):
        return v.values
    if isinstance(v, LayerCurve):
        return v.y
    return np.asarray(v, dtype=np.float64)


def _delta(cfg):
    return cfg.delta if isinstance(cfg, ClampConfig) else ClampConfig(float(cfg)).delta


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def clamp(v, delta):
    """``min(delta, max(-delta, v))``."""
    if not delta > 0:
        raise ValueError("clamp delta must be positive")
    return np.minimum(delta, np.maximum(-delta, v))


def nll_gaussian_pixel(mu, sigma, target):
    """Per-element Gaussian negative log-likelihood, constant included."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    r = np.asarray(target, dtype=np.float64) - mu
    return 0.5 * (r * r / (sigma * sigma) + np.log(sigma * sigma) + LOG_2PI)


def total_nll(field, target):
    """Sum of :func:`nll_gaussian_pixel` over the whole field."""
    t = _arr(target)
    _same_shape(field.mu, t)
    return float(np.sum(nll_gaussian_pixel(field.mu, field.sigma, t)))


def clamped_l1_loss(pred, target, cfg=ClampConfig()):
    """Sum of ``|clamp(target) - clamp(pred)|``; each element adds at most 2*delta."""
    p, t = _arr(pred), _arr(target)
    _same_shape(p, t)
    delta = _delta(cfg)
    return float(np.sum(np.abs(clamp(t, delta) - clamp(p, delta))))


def clamped_nll_loss(field, target, cfg=ClampConfig()):
    """Clamped-residual NLL without the ln(2 pi) constant; sigma is not clamped."""
    t = _arr(target)
    _same_shape(field.mu, t)
    delta = _delta(cfg)
    r = clamp(t, delta) - clamp(field.mu, delta)
    var = field.sigma * field.sigma
    return float(np.sum(0.5 * (r * r / var + np.log(var))))


def regr_nll_loss(curve, gt):
    """Per-column Gaussian NLL of the ground-truth curve, summed over columns."""
    y = _arr(gt)
    if curve.mu.shape != y.shape:
        raise ValueError(f"length mismatch: {curve.mu.size} vs {y.size}")
    return float(np.sum(nll_gaussian_pixel(curve.mu, curve.sigma, y)))


def interpolate_column(values, y):
    """Linear interpolation of ``values[:, x]`` at row ``y[x]`` for every column."""
    values = np.asarray(values, dtype=np.float64)
    height = values.shape[0]
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, height - 1.0)
    y0 = np.minimum(np.floor(y).astype(int), max(height - 2, 0))
    t = y - y0
    cols = np.arange(values.shape[1])
    y1 = np.minimum(y0 + 1, height - 1)
    return (1.0 - t) * values[y0, cols] + t * values[y1, cols]


def propagate_uncertainty(field, cfg=None):
    """Contour distribution implied by a Gaussian distance field.

    The mean is the boundary extracted from ``field.mu``; the standard
    deviation is ``field.sigma`` read at that boundary. Columns whose mean
    field never crosses the level are flagged and carry ``sigma = inf``.
    """
    cfg = cfg or ExtractionConfig()
    y, flags = extract(field.mu, cfg)
    sigma = np.full(y.shape, np.inf)
    ok = ~flags & np.isfinite(y)
    if ok.any():
        sigma[ok] = interpolate_column(field.sigma, np.where(ok, y, 0.0))[ok]
    return ProbabilisticCurve(y, sigma, ~ok)
