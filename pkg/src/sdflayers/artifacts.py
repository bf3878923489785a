"""Synthetic OCT corruptions: shadow, blinking, speckle and motion.

Every corruption can be restricted to a column interval ``[x0, x1)``; pixels
outside it are returned bit-identical. Randomness comes only from
``NoiseConfig.seed`` (or an explicit generator), so outputs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sdflayers.grid import BScan

KINDS = ("shadow", "blinking", "speckle", "motion")
SPECKLE_RANGE = (0.4, 0.6)


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "speckle"
    region: tuple | None = None
    shadow_mu: float | None = None
    shadow_sigma: float | None = None
    shadow_mode: str = "normalized"
    speckle_p: float | None = None
    delta_max: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS + ("none",):
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if self.region is not None:
            x0, x1 = self.region
            if not 0 <= x0 < x1:
                raise ValueError(f"bad region {self.region}")
        if self.speckle_p is not None and not SPECKLE_RANGE[0] <= self.speckle_p <= SPECKLE_RANGE[1]:
            raise ValueError(f"speckle p must lie in {SPECKLE_RANGE}")
        if self.delta_max < 0:
            raise ValueError("delta_max must be >= 0")
        if self.shadow_mode not in ("normalized", "pdf"):
            raise ValueError("shadow_mode must be 'normalized' or 'pdf'")

    def columns(self, width):
        if self.region is None:
            return 0, width
        x0, x1 = self.region
        if x1 > width:
            raise ValueError(f"region {self.region} exceeds image width {width}")
        return int(x0), int(x1)


def _grid(scan):
    a = scan.intensities if isinstance(scan, BScan) else np.asarray(scan, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2D scan")
    return a


def _wrap(scan, out):
    return BScan(out) if isinstance(scan, BScan) else out


def _rng(cfg, rng):
    return rng if rng is not None else np.random.default_rng(cfg.seed)


def shadow_profile(width, mu, sigma, mode="normalized"):
    """Attenuation ``s(x)`` per column: a Gaussian peaking at 1 (``normalized``)
    or the raw normal density (``pdf``)."""
    x = np.arange(width, dtype=np.float64)
    g = np.exp(-0.5 * ((x - mu) / sigma) ** 2)
    if mode == "pdf":
        g = g / (sigma * np.sqrt(2.0 * np.pi))
    return g


def _shadow(a, cfg, rng):
    width = a.shape[1]
    mu = cfg.shadow_mu if cfg.shadow_mu is not None else rng.uniform(0.0, width)
    sigma = cfg.shadow_sigma if cfg.shadow_sigma is not None else rng.uniform(width / 4.0, 3.0 * width / 4.0)
    x0, x1 = cfg.columns(width)
    out = a.copy()
    s = shadow_profile(width, mu, sigma, cfg.shadow_mode)
    out[:, x0:x1] = np.clip(a[:, x0:x1] * (1.0 - s[x0:x1]), 0.0, 1.0)
    return out, {"mu": float(mu), "sigma": float(sigma), "mode": cfg.shadow_mode}


def _blinking(a, cfg, rng):
    x0, x1 = cfg.columns(a.shape[1])
    centre, spread = float(np.median(a)), float(np.std(a))
    out = a.copy()
    block = rng.normal(centre, spread, (a.shape[0], x1 - x0)) if spread > 0 else np.full((a.shape[0], x1 - x0), centre)
    out[:, x0:x1] = np.clip(block, 0.0, 1.0)
    return out, {"median": centre, "sd": spread}


def _speckle(a, cfg, rng):
    x0, x1 = cfg.columns(a.shape[1])
    p = cfg.speckle_p if cfg.speckle_p is not None else rng.uniform(*SPECKLE_RANGE)
    hi, lo = float(a.max()), float(a.min())
    out = a.copy()
    on = rng.uniform(size=(a.shape[0], x1 - x0)) < p
    out[:, x0:x1] = np.where(on, hi, lo)
    return out, {"p": float(p)}


def shift_row(row, shift):
    """Integer horizontal shift with edge replication (positive moves content right)."""
    n = row.size
    idx = np.clip(np.arange(n) - shift, 0, n - 1)
    return row[idx]


def _motion(a, cfg, rng):
    x0, x1 = cfg.columns(a.shape[1])
    if cfg.delta_max >= x1 - x0 and cfg.delta_max > 0:
        raise ValueError("delta_max must be smaller than the corrupted width")
    shifts = rng.integers(-cfg.delta_max, cfg.delta_max + 1, size=a.shape[0])
    out = a.copy()
    for y, s in enumerate(shifts):
        out[y, x0:x1] = shift_row(a[y, x0:x1], int(s))
    return out, {"shifts": [int(s) for s in shifts]}


_APPLY = {"shadow": _shadow, "blinking": _blinking, "speckle": _speckle, "motion": _motion}


def corrupt(scan, cfg: NoiseConfig, rng=None):
    """Apply ``cfg.kind`` and return ``(corrupted, drawn_parameters)``."""
    a = _grid(scan)
    if cfg.kind == "none":
        cfg.columns(a.shape[1])
        return _wrap(scan, a.copy()), {}
    out, params = _APPLY[cfg.kind](a, cfg, _rng(cfg, rng))
    return _wrap(scan, out), params


def apply_shadow(scan, cfg: NoiseConfig, rng=None):
    """Scale each column by ``1 - s(x)`` for a Gaussian attenuation profile ``s``."""
    return _wrap(scan, _shadow(_grid(scan), cfg, _rng(cfg, rng))[0])


def apply_blinking(scan, cfg: NoiseConfig, rng=None):
    """Replace region pixels with i.i.d. ``N(median, sd**2)`` draws (scan statistics), clipped."""
    return _wrap(scan, _blinking(_grid(scan), cfg, _rng(cfg, rng))[0])


def apply_speckle(scan, cfg: NoiseConfig, rng=None):
    """Set region pixels to the scan maximum with probability ``p``, else to its minimum."""
    return _wrap(scan, _speckle(_grid(scan), cfg, _rng(cfg, rng))[0])


def apply_motion(scan, cfg: NoiseConfig, rng=None):
    """Shift every row (segment) by an integer drawn from ``[-delta_max, delta_max]``."""
    return _wrap(scan, _motion(_grid(scan), cfg, _rng(cfg, rng))[0])
