"""Adam training loop, target construction and checkpoints."""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from sdflayers.nn import engine as E
from sdflayers.nn.losses import LOSS_FOR_HEAD, head_loss
from sdflayers.nn.network import FIELD_HEADS, TinyUNet, TinyUNetConfig
from sdflayers.prob import DEFAULT_DELTA
from sdflayers.sdf import rasterize_curve, signed_distance

log = logging.getLogger(__name__)


LR_SCHEDULES = ("constant", "cosine")


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    delta: float = DEFAULT_DELTA
    loss: str | None = None
    reduction: str = "sum"
    noise_sd: float = 0.0
    flip: bool = False
    construction: str = "vertical"
    sigma_warmup: int = 0
    lr_schedule: str = "constant"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch_size > 0")
        if self.learning_rate < 0 or self.eps <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("invalid optimizer hyperparameters")
        if self.delta <= 0:
            raise ValueError("clamp delta must be positive")
        if self.reduction not in ("sum", "mean"):
            raise ValueError("reduction must be 'sum' or 'mean'")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.sigma_warmup < 0:
            raise ValueError("sigma_warmup must be >= 0")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")

    def learning_rate_at(self, step, total):
        """Step size for update ``step`` of ``total``; cosine decays to zero."""
        if self.lr_schedule == "constant" or total <= 1:
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + np.cos(np.pi * step / total))


@dataclass
class TrainResult:
    loss_trace: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    epochs: int = 0


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, frozen=()):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None or p.name in frozen:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_targets(curves, head, shape, construction="vertical"):
    """Training targets for ``head`` from curves shaped ``(N, K, X)``.

    Field heads get ``(N, K, Y, X)`` grids (signed distances, or one-hot
    boundary masks for ``pixelwise``); curve heads use the curves directly.
    """
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim != 3:
        raise ValueError(f"curves must be (N, K, X), got {curves.shape}")
    if head not in FIELD_HEADS:
        return curves
    n, k, _ = curves.shape
    out = np.empty((n, k, *shape))
    for i in range(n):
        for j in range(k):
            if head == "pixelwise":
                out[i, j] = rasterize_curve(curves[i, j], shape)
            else:
                out[i, j] = signed_distance(curves[i, j], shape, construction).values
    return out


def _augment(x, t, head, cfg, rng):
    """Additive Gaussian noise (per-sample sd ~ U[0, noise_sd]) and horizontal flips."""
    if cfg.flip:
        flip = rng.uniform(size=x.shape[0]) < 0.5
        if flip.any():
            x = x.copy()
            t = t.copy()
            x[flip] = x[flip, ..., ::-1]
            t[flip] = t[flip, ..., ::-1]
    if cfg.noise_sd > 0:
        sd = rng.uniform(0.0, cfg.noise_sd, size=(x.shape[0],) + (1,) * (x.ndim - 1))
        x = x + sd * rng.standard_normal(x.shape)
    return x, t


def train(model: TinyUNet, scans, targets, cfg: TrainConfig, callback=None):
    """Fit ``model`` in place with Adam.

    ``targets`` are either curves ``(N, K, X)`` (converted per head) or
    precomputed ``(N, K, Y, X)`` fields for the field heads. The loss trace
    holds the mean per-sample training loss for each epoch.
    """
    scans = np.asarray(scans, dtype=np.float64)
    if scans.ndim != 3 or scans.shape[0] == 0:
        raise ValueError("need a non-empty (N, Y, X) stack of scans")
    head = model.config.head
    shape = scans.shape[1:]
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 3:
        targets = make_targets(targets, head, shape, cfg.construction)
    expect = (scans.shape[0], model.config.n_layers) + ((shape if head in FIELD_HEADS else (shape[1],)))
    if targets.shape != expect:
        raise ValueError(f"targets shape {targets.shape} does not fit head {head!r} (expected {expect})")
    kind = cfg.loss or LOSS_FOR_HEAD[head]

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    result = TrainResult()
    n = scans.shape[0]
    sigma_params = {name for name in model.params if name.startswith("head.sigma")}
    per_epoch = -(-n // cfg.batch_size)
    total_steps, step = cfg.epochs * per_epoch, 0
    for epoch in range(cfg.epochs):
        # the loss sees sigma == 1 while the mean head catches up
        frozen = sigma_params if epoch < cfg.sigma_warmup else ()
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x, t = _augment(scans[idx], targets[idx], head, cfg, rng)
            model.zero_grad()
            out = model.forward(x)
            if frozen and "sigma" in out:
                # the trunk would otherwise still move sigma through shared features
                out["sigma"] = E.Tensor(np.ones(out["mu"].shape))
            loss = head_loss(out, t, head, cfg.delta, kind, cfg.reduction)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch} batch {b} "
                                     f"(samples {idx.tolist()})")
            loss.backward()
            opt.lr = cfg.learning_rate_at(step, total_steps)
            opt.step(frozen)
            step += 1
            result.step_losses.append(value)
            total += value * (1.0 if cfg.reduction == "sum" else len(idx))
        result.loss_trace.append(total / n)
        result.epochs = epoch + 1
        log.info("epoch %d loss %.6g", epoch, result.loss_trace[-1])
        if callback is not None:
            callback(epoch, result)
    return result


def evaluate_loss(model, scans, targets, cfg: TrainConfig):
    """Mean per-sample loss over a dataset without updating anything."""
    scans = np.asarray(scans, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    head = model.config.head
    if targets.ndim == 3:
        targets = make_targets(targets, head, scans.shape[1:], cfg.construction)
    total = 0.0
    for start in range(0, scans.shape[0], cfg.batch_size):
        sl = slice(start, start + cfg.batch_size)
        out = model.forward(scans[sl])
        total += float(head_loss(out, targets[sl], head, cfg.delta, cfg.loss, "sum").data)
    return total / scans.shape[0]


def predict_batches(model, scans, batch_size=16):
    """Forward pass in batches; returns numpy arrays keyed like ``model.forward``."""
    scans = np.asarray(scans, dtype=np.float64)
    parts = {}
    for start in range(0, scans.shape[0], batch_size):
        out = model.forward(E.Tensor(scans[start:start + batch_size]))
        for k, v in out.items():
            parts.setdefault(k, []).append(v.data)
    return {k: np.concatenate(v) for k, v in parts.items()}


# checkpoints ----------------------------------------------------------------


def _config_hash(net_cfg, train_cfg):
    blob = json.dumps({"net": asdict(net_cfg), "train": asdict(train_cfg) if train_cfg else None},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(directory, model, result=None, train_cfg=None):
    """``params.bin`` (little-endian float64 blob), ``manifest.txt``, ``loss_trace.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = model.get_flat().astype("<f8").tobytes()
    (directory / "params.bin").write_bytes(blob)
    lines = [
        f"net_config = {json.dumps(asdict(model.config), sort_keys=True)}",
        f"train_config = {json.dumps(asdict(train_cfg), sort_keys=True) if train_cfg else 'null'}",
        f"config_hash = {_config_hash(model.config, train_cfg)}",
        f"seed = {model.config.seed}",
        f"epoch = {result.epochs if result else 0}",
        f"n_parameters = {model.n_parameters()}",
        f"params_sha256 = {hashlib.sha256(blob).hexdigest()}",
    ]
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
    buf = io.StringIO()
    buf.write("epoch,loss\n")
    for i, v in enumerate(result.loss_trace if result else []):
        buf.write(f"{i},{v!r}\n")
    (directory / "loss_trace.csv").write_text(buf.getvalue())


def load_checkpoint(directory):
    """Rebuild ``(model, train_cfg, loss_trace)`` from :func:`save_checkpoint` output."""
    directory = Path(directory)
    manifest = {}
    for line in (directory / "manifest.txt").read_text().splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            manifest[k] = v
    net_cfg = TinyUNetConfig(**json.loads(manifest["net_config"]))
    tc = json.loads(manifest["train_config"])
    train_cfg = TrainConfig(**tc) if tc else None
    model = TinyUNet(net_cfg)
    blob = (directory / "params.bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest.get("params_sha256"):
        raise ValueError(f"{directory}: parameter blob does not match manifest hash")
    model.set_flat(np.frombuffer(blob, dtype="<f8"))
    trace = []
    trace_path = directory / "loss_trace.csv"
    if trace_path.exists():
        for line in trace_path.read_text().splitlines()[1:]:
            if line:
                trace.append(float(line.split(",")[1]))
    return model, train_cfg, trace
