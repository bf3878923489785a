"""Synthetic layered B-scans with known sub-pixel boundaries.

Each phantom stacks ``n_layers`` smooth boundaries built from a few
random-phase sinusoids. Boundaries are generated top-down as cumulative gaps,
so ``y_k(x) >= y_{k-1}(x) + min_gap`` holds by construction. Bands between
boundaries are piecewise constant, with partial-pixel mixing at each boundary
so the image carries sub-pixel position information, plus Gaussian texture.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from sdflayers.grid import DEFAULT_LABELS, BScan, MultiLayerCurve, load_curves, load_scan, save_curves, save_scan

MARGIN = 4.0


class CorpusWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PhantomConfig:
    height: int = 64
    width: int = 64
    n_layers: int = 3
    smoothness: int = 4
    min_gap: float = 4.0
    mean_gap: float = 8.0
    amplitude: float = 4.0
    bump_rate: float = 0.3
    bump_amplitude: tuple = (2.0, 6.0)
    texture_noise_sd: float = 0.06
    intensity_levels: tuple = (0.08, 0.45, 0.9, 0.3)
    seed: int = 0
    labels: tuple = field(default=DEFAULT_LABELS)

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.n_layers < 1 or self.smoothness < 0:
            raise ValueError("invalid phantom dimensions")
        if not self.min_gap > 0:
            raise ValueError("min_gap must be positive")
        if self.mean_gap < self.min_gap:
            raise ValueError("mean_gap must be >= min_gap")
        lo, hi = self.bump_amplitude
        if lo < 0 or hi < lo:
            raise ValueError("bump amplitude range must satisfy 0 <= lo <= hi")
        if not 0.0 <= self.bump_rate <= 1.0:
            raise ValueError("bump_rate must be a probability")
        if len(self.intensity_levels) != self.n_layers + 1:
            raise ValueError(f"need {self.n_layers + 1} band intensities, got {len(self.intensity_levels)}")
        if any(not 0.0 <= v <= 1.0 for v in self.intensity_levels):
            raise ValueError("band intensities must lie in [0, 1]")
        if self.texture_noise_sd < 0:
            raise ValueError("texture_noise_sd must be >= 0")
        if (self.n_layers - 1) * self.min_gap + 2 * MARGIN > self.height - 1:
            raise ValueError(f"infeasible geometry: {self.n_layers} layers with min_gap {self.min_gap} "
                             f"do not fit in {self.height} rows")

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def curvature_bound(self):
        """Upper bound on ``|y(x+1) - 2 y(x) + y(x-1)|`` of any generated curve."""
        if self.smoothness == 0:
            return 0.0 if self.bump_rate == 0 else float("inf")
        w = 2 * np.pi / self.width
        per_curve = sum(self.amplitude / k * (w * k) ** 2 for k in range(1, self.smoothness + 1))
        gap_amp = (self.mean_gap - self.min_gap) / max(_harmonic_weights(self.smoothness), 1.0)
        per_gap = sum(gap_amp / k * (w * k) ** 2 for k in range(1, self.smoothness + 1))
        bump = self.bump_amplitude[1] * 2.0 / _bump_width(self.width) ** 2 if self.bump_rate > 0 else 0.0
        return per_curve + (self.n_layers - 1) * per_gap + bump


def _bump_width(width):
    return width / 10.0


def _harmonics(rng, width, n, amp):
    """Sum of ``n`` random-phase sinusoids; harmonic k has amplitude <= amp / k."""
    x = np.arange(width, dtype=np.float64)
    out = np.zeros(width)
    for k in range(1, n + 1):
        a = rng.uniform(0.0, amp / k)
        phase = rng.uniform(0.0, 2 * np.pi)
        out += a * np.sin(2 * np.pi * k * x / width + phase)
    return out


def _harmonic_weights(n):
    return sum(1.0 / k for k in range(1, n + 1))


def _curves(cfg, rng):
    width, n = cfg.width, cfg.smoothness
    curves = np.empty((cfg.n_layers, width))
    curves[0] = _harmonics(rng, width, n, cfg.amplitude)
    # gaps wobble around mean_gap but never drop below min_gap
    gap_amp = (cfg.mean_gap - cfg.min_gap) / max(_harmonic_weights(n), 1.0)
    for k in range(1, cfg.n_layers):
        curves[k] = curves[k - 1] + cfg.mean_gap + _harmonics(rng, width, n, gap_amp)
    if cfg.n_layers > 1 and rng.uniform() < cfg.bump_rate:
        # detachment-like dome: lifts every layer above the deepest one
        x = np.arange(width, dtype=np.float64)
        centre = rng.uniform(0.2 * width, 0.8 * width)
        amp = rng.uniform(*cfg.bump_amplitude)
        dome = amp * np.exp(-0.5 * ((x - centre) / _bump_width(width)) ** 2)
        curves[:-1] -= dome
    lo, hi = MARGIN, cfg.height - 1 - MARGIN
    span = curves.max() - curves.min()
    if span > hi - lo:
        # shrink the wobble toward flat, min_gap-spaced layers until the stack fits
        c0 = np.full(width, curves[0].mean())
        wobble0 = curves[0] - c0
        gaps = np.diff(curves, axis=0) - cfg.min_gap
        f = 1.0
        while span > hi - lo:
            f *= 0.9
            shrunk = np.vstack([c0 + f * wobble0, c0 + f * wobble0 + np.cumsum(cfg.min_gap + f * gaps, axis=0)])
            span = shrunk.max() - shrunk.min()
        curves = shrunk
    top = rng.uniform(lo, max(hi - span, lo))
    curves += top - curves.min()
    return curves


def render(curves, cfg, rng):
    """Band image with partial-pixel mixing at each boundary, plus texture noise."""
    levels = np.asarray(cfg.intensity_levels, dtype=np.float64)
    rows = np.arange(cfg.height, dtype=np.float64)[:, None]
    img = np.full((cfg.height, cfg.width), levels[0])
    for k in range(curves.shape[0]):
        below = np.clip(rows + 0.5 - curves[k][None, :], 0.0, 1.0)
        img += (levels[k + 1] - levels[k]) * below
    if cfg.texture_noise_sd > 0:
        img += rng.normal(0.0, cfg.texture_noise_sd, img.shape)
    # float32-representable so flat-binary export is lossless
    return np.clip(img, 0.0, 1.0).astype(np.float32).astype(np.float64)


def generate(cfg: PhantomConfig, n: int):
    """``n`` phantoms as ``(BScan, MultiLayerCurve)`` pairs; a pure function of ``(cfg, n)``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(cfg.seed)
    out = []
    for _ in range(n):
        curves = _curves(cfg, rng)
        scan = BScan(render(curves, cfg, rng))
        out.append((scan, MultiLayerCurve.from_array(curves, cfg.labels[:cfg.n_layers])))
    return out


def as_arrays(samples):
    """Stack samples into ``scans (N, Y, X)`` and ``curves (N, K, X)``."""
    scans = np.stack([s.intensities for s, _ in samples])
    curves = np.stack([c.as_array() for _, c in samples])
    return scans, curves


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def export_corpus(samples, directory, cfg=None, scan_format="flat-binary"):
    """Write ``scan_%04d.osk`` (or ``.pgm``), ``curves_%04d.csv`` and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = ".osk" if scan_format == "flat-binary" else ".pgm"
    files = []
    for i, (scan, curves) in enumerate(samples):
        sp = directory / f"scan_{i:04d}{ext}"
        cp = directory / f"curves_{i:04d}.csv"
        save_scan(scan, sp, scan_format)
        save_curves(curves, cp)
        files.append({"scan": sp.name, "curves": cp.name, "scan_sha256": _sha(sp), "curves_sha256": _sha(cp)})
    manifest = {
        "n": len(samples),
        "scan_format": scan_format,
        "config": asdict(cfg) if cfg is not None else None,
        "config_hash": cfg.digest() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "files": files,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory / "manifest.json"


def read_manifest(directory):
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    return json.loads(path.read_text())


def load_corpus(directory, expected_seed=None):
    """Reload an exported corpus; warns when the manifest seed differs from ``expected_seed``."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    if expected_seed is not None and manifest.get("seed") != expected_seed:
        warnings.warn(f"{directory}: manifest seed {manifest.get('seed')} != expected {expected_seed}",
                      CorpusWarning, stacklevel=2)
    samples = []
    for entry in manifest["files"]:
        scan = load_scan(directory / entry["scan"], normalize_values=False)
        curves = load_curves(directory / entry["curves"])
        samples.append((scan, curves))
    return samples


def corpus_config(directory):
    cfg = read_manifest(directory).get("config")
    if cfg is None:
        return None
    cfg = dict(cfg)
    cfg["bump_amplitude"] = tuple(cfg["bump_amplitude"])
    cfg["intensity_levels"] = tuple(cfg["intensity_levels"])
    cfg["labels"] = tuple(cfg["labels"])
    return PhantomConfig(**cfg)
