"""Segmentation error reports and the corrupted-region uncertainty experiment."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from sdflayers.artifacts import KINDS, NoiseConfig, corrupt
from sdflayers.grid import DEFAULT_LABELS, FormatError, LayerCurve, MultiLayerCurve
from sdflayers.prob import ProbabilisticCurve

CONTROL = "none"


def _vec(c):
    if isinstance(c, LayerCurve):
        return c.y
    if isinstance(c, ProbabilisticCurve):
        return np.where(c.flags, np.nan, c.mu)
    return np.asarray(c, dtype=np.float64)


def mae(pred, gt, flags=None):
    """Mean absolute vertical error over unflagged columns.

    Columns are skipped when ``flags`` marks them or the prediction is NaN.
    """
    p, g = _vec(pred), _vec(gt)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {g.shape}")
    bad = ~np.isfinite(p)
    if flags is not None:
        bad |= np.asarray(flags, dtype=bool)
    if bad.all():
        raise ValueError("every column is flagged; MAE undefined")
    return float(np.mean(np.abs(p[~bad] - g[~bad])))


@dataclass
class MaeReport:
    labels: tuple
    means: np.ndarray
    sds: np.ndarray
    n_scans: int
    flag_rate: float = 0.0

    @property
    def aggregate(self):
        return float(np.mean(self.means))

    def rows(self):
        out = [(lab, float(m), float(s)) for lab, m, s in zip(self.labels, self.means, self.sds)]
        return out + [("Avg.", self.aggregate, float("nan"))]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "mae", "sd"])
        for lab, m, s in self.rows():
            w.writerow([lab, repr(m), "" if np.isnan(s) else repr(s)])
        w.writerow(["flag_rate", repr(float(self.flag_rate)), ""])
        w.writerow(["n_scans", self.n_scans, ""])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if not rows or rows[0] != ["layer", "mae", "sd"]:
            raise FormatError("MAE report needs header layer,mae,sd")
        labels, means, sds, flag_rate, n = [], [], [], 0.0, 0
        for lab, m, s in rows[1:]:
            if lab == "Avg.":
                continue
            if lab == "flag_rate":
                flag_rate = float(m)
            elif lab == "n_scans":
                n = int(m)
            else:
                labels.append(lab)
                means.append(float(m))
                sds.append(float(s))
        return cls(tuple(labels), np.array(means), np.array(sds), n, flag_rate)

    def to_text(self, title=None):
        lines = [title] if title else []
        lines.append(f"{'Layer':<8}{'MAE (px)':>12}{'sd':>10}")
        for lab, m, s in self.rows():
            sd = "" if np.isnan(s) else f"{s:.4f}"
            lines.append(f"{lab:<8}{m:>12.4f}{sd:>10}")
        lines.append(f"scans: {self.n_scans}; flagged columns: {100 * self.flag_rate:.2f}%; "
                     "sd is the population sd across scans")
        return "\n".join(lines) + "\n"


def _stack(curves):
    if isinstance(curves, np.ndarray):
        return np.asarray(curves, dtype=np.float64)
    return np.stack([c.as_array() if isinstance(c, MultiLayerCurve) else np.asarray(c, dtype=np.float64)
                     for c in curves])


def mae_corpus(preds, gts, flags=None, labels=None):
    """Per-layer mean and population sd (across scans) of per-scan MAE."""
    p, g = _stack(preds), _stack(gts)
    if p.shape != g.shape:
        raise ValueError(f"corpus mismatch: predictions {p.shape} vs ground truth {g.shape}")
    if p.ndim != 3:
        raise ValueError("expected (N, K, X) curve stacks")
    f = np.zeros(p.shape, dtype=bool) if flags is None else np.asarray(flags, dtype=bool)
    n, k, _ = p.shape
    per_scan = np.empty((n, k))
    for i in range(n):
        for j in range(k):
            per_scan[i, j] = mae(p[i, j], g[i, j], f[i, j])
    if labels is None:
        labels = getattr(gts[0], "labels", None) if not isinstance(gts, np.ndarray) else None
        if not labels:
            labels = DEFAULT_LABELS[:k] if k <= len(DEFAULT_LABELS) else [f"L{j}" for j in range(k)]
    bad = f | ~np.isfinite(p)
    return MaeReport(tuple(labels), per_scan.mean(axis=0), per_scan.std(axis=0), n, float(bad.mean()))


def region_variance(curve, region):
    """Mean of ``sigma**2`` over the columns ``[x0, x1)``, flagged columns excluded."""
    x0, x1 = region
    if not 0 <= x0 < x1 <= len(curve):
        raise ValueError(f"region {region} is empty or outside the curve")
    sl = slice(x0, x1)
    keep = ~curve.flags[sl] & np.isfinite(curve.sigma[sl])
    if not keep.any():
        raise ValueError("no unflagged columns in region")
    return float(np.mean(curve.sigma[sl][keep] ** 2))


@dataclass
class VarianceReport:
    kinds: list = field(default_factory=list)
    clean: list = field(default_factory=list)
    corrupted: list = field(default_factory=list)
    counts: list = field(default_factory=list)

    def add(self, kind, clean, corrupted, count):
        self.kinds.append(kind)
        self.clean.append(float(clean))
        self.corrupted.append(float(corrupted))
        self.counts.append(int(count))

    def ratio(self, kind):
        i = self.kinds.index(kind)
        return self.corrupted[i] / self.clean[i]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "clean_variance", "corrupted_variance", "ratio", "n_regions"])
        for k, c, d, n in zip(self.kinds, self.clean, self.corrupted, self.counts):
            w.writerow([k, repr(c), repr(d), repr(d / c), n])
        return buf.getvalue()

    def to_text(self):
        lines = [f"{'noise':<10}{'clean var':>12}{'corrupt var':>13}{'ratio':>8}  "]
        top = max(self.corrupted + self.clean) or 1.0
        for k, c, d in zip(self.kinds, self.clean, self.corrupted):
            bar = "#" * int(round(20 * d / top))
            lines.append(f"{k:<10}{c:>12.4f}{d:>13.4f}{d / c:>8.3f}  {bar}")
        return "\n".join(lines) + "\n"


def _layer_curves(mu, sigma, flags):
    return [ProbabilisticCurve(mu[k], sigma[k], flags[k]) for k in range(mu.shape[0])]


def uncertainty_experiment(model, scans, kinds=KINDS, seed=0, n_regions=10, region_width=None,
                           delta_max=3, include_control=True):
    """Average per-A-scan variance inside random regions, before and after corruption.

    ``model`` must be a fitted probabilistic estimator exposing
    ``predict_distribution`` and a non-empty ``loss_trace_``. For each scan,
    ``n_regions`` column intervals of width ``region_width`` (default X/8)
    are drawn; each is corrupted with every kind in turn and the variance
    over that interval is compared with the clean prediction of the same
    interval. Shadows are centred on the region. Ratios are corrupted over
    clean means across all regions, layers and scans.
    """
    if not getattr(model, "loss_trace_", None):
        raise ValueError("model has no loss trace; fit it before running the experiment")
    scans = np.asarray(scans, dtype=np.float64)
    n, _, width = scans.shape
    w = region_width or max(width // 8, 1)
    rng = np.random.default_rng(seed)
    kinds = list(kinds) + ([CONTROL] if include_control else [])
    sums = {k: [0.0, 0.0, 0] for k in kinds}
    mu0, sig0, fl0 = model.predict_distribution(scans)
    for i in range(n):
        clean = _layer_curves(mu0[i], sig0[i], fl0[i])
        starts = rng.integers(0, width - w + 1, size=n_regions)
        batch, tags = [], []
        for x0 in starts:
            region = (int(x0), int(x0) + w)
            for kind in kinds:
                cfg = NoiseConfig(kind=kind, region=region, delta_max=min(delta_max, w - 1),
                                  shadow_mu=x0 + w / 2.0, seed=int(rng.integers(2 ** 32)))
                batch.append(corrupt(scans[i], cfg)[0])
                tags.append((kind, region))
        mu, sig, fl = model.predict_distribution(np.stack(batch))
        for b, (kind, region) in enumerate(tags):
            for k, curve in enumerate(_layer_curves(mu[b], sig[b], fl[b])):
                try:
                    c = region_variance(clean[k], region)
                    d = region_variance(curve, region)
                except ValueError:
                    continue
                s = sums[kind]
                s[0] += c
                s[1] += d
                s[2] += 1
    report = VarianceReport()
    for kind in kinds:
        c, d, m = sums[kind]
        if m == 0:
            raise ValueError(f"no usable regions for {kind!r}")
        report.add(kind, c / m, d / m, m)
    return report
