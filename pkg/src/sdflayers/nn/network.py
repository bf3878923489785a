"""Tiny encoder-decoder backbone with the five prediction heads."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from sdflayers.nn import engine as E

HEADS = ("pixelwise", "regr", "p_regr", "sdf", "p_sdf")
PROBABILISTIC_HEADS = ("p_regr", "p_sdf")
FIELD_HEADS = ("pixelwise", "sdf", "p_sdf")

SIGMA_FLOOR = 1e-4
LEAK = 0.1


@dataclass(frozen=True)
class TinyUNetConfig:
    height: int = 64
    width: int = 64
    levels: int = 3
    base_channels: int = 8
    n_layers: int = 3
    head: str = "p_sdf"
    seed: int = 0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.levels < 0 or self.base_channels <= 0 or self.n_layers <= 0:
            raise ValueError("levels must be >= 0, channels and n_layers > 0")
        step = 2 ** self.levels
        if self.height % step or self.width % step:
            raise ValueError(f"input {self.height}x{self.width} not divisible by 2**levels={step}")

    def channels(self, level):
        return self.base_channels * 2 ** min(level, max(self.levels - 1, 0))

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _sigma_bias():
    # softplus(b) + floor == 1
    return float(np.log(np.expm1(1.0 - SIGMA_FLOOR)))


class TinyUNet:
    """U-shaped network: strided-conv encoder, nearest-upsample decoder, skips.

    Distance-valued outputs are multiplied by a fixed ``scale`` of half the
    image height so that a unit-scale network reaches pixel-scale targets;
    curve heads additionally add the mid-row offset.
    """

    def __init__(self, config: TinyUNetConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.params: dict[str, E.Tensor] = {}
        c = config.channels

        def conv(name, cin, cout, k=3):
            fan_in = cin * k * k
            bound = np.sqrt(6.0 / fan_in)
            self.params[name + ".w"] = E.parameter(rng.uniform(-bound, bound, (cout, cin, k, k)), name + ".w")
            self.params[name + ".b"] = E.parameter(np.zeros(cout), name + ".b")

        def col_affine(name, cin, cout):
            bound = np.sqrt(6.0 / cin)
            self.params[name + ".w"] = E.parameter(rng.uniform(-bound, bound, (cout, cin)), name + ".w")
            self.params[name + ".b"] = E.parameter(np.zeros(cout), name + ".b")

        conv("enc0a", 1, c(0))
        conv("enc0b", c(0), c(0))
        for lv in range(1, config.levels + 1):
            conv(f"down{lv}", c(lv - 1), c(lv))
            conv(f"enc{lv}", c(lv), c(lv))
        for lv in range(config.levels - 1, -1, -1):
            conv(f"dec{lv}", c(lv + 1) + c(lv), c(lv))

        k, head = config.n_layers, config.head
        if head in FIELD_HEADS:
            conv("head.mu", c(0), k, k=1)
            if head == "p_sdf":
                conv("head.sigma", c(0), k, k=1)
                self.params["head.sigma.b"].data[:] = _sigma_bias()
        else:
            col_affine("head.mu", c(0), k)
            if head == "p_regr":
                col_affine("head.sigma", c(0), k)
                self.params["head.sigma.b"].data[:] = _sigma_bias()
        # init scale is uniform on [-bound, bound]; the 1x1 output heads use a
        # gentler gain so early predictions stay within a few pixels of zero
        for name in ("head.mu.w", "head.sigma.w"):
            if name in self.params:
                self.params[name].data *= 0.1

    @property
    def scale(self):
        return self.config.height / 2.0

    def n_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def _conv(self, name, x, stride=1):
        return E.conv2d(x, self.params[name + ".w"], self.params[name + ".b"], stride=stride)

    def features(self, x):
        p = self._conv
        h = E.leaky_relu(p("enc0a", x), LEAK)
        h = E.leaky_relu(p("enc0b", h), LEAK)
        skips = [h]
        for lv in range(1, self.config.levels + 1):
            h = E.leaky_relu(p(f"down{lv}", h, stride=2), LEAK)
            h = E.leaky_relu(p(f"enc{lv}", h), LEAK)
            skips.append(h)
        for lv in range(self.config.levels - 1, -1, -1):
            h = E.concat([E.upsample2x(h), skips[lv]], axis=1)
            h = E.leaky_relu(p(f"dec{lv}", h), LEAK)
        return h

    def forward(self, x):
        """Run the network on a batch of scans shaped (N, Y, X) or (N, 1, Y, X).

        Returns a dict of tensors. Field heads give ``(N, K, Y, X)`` arrays,
        curve heads ``(N, K, X)``. Keys: ``mu`` (distance, curve or
        probability), ``sigma`` for probabilistic heads, ``logits`` for the
        pixelwise head.
        """
        x = E.as_tensor(x)
        if x.ndim == 3:
            x = E.Tensor(x.data[:, None])
        cfg = self.config
        if x.shape[1:] != (1, cfg.height, cfg.width):
            raise ValueError(f"input shape {x.shape[1:]} does not match network (1, {cfg.height}, {cfg.width})")
        h = self.features(x)
        head = cfg.head
        out = {}
        if head in FIELD_HEADS:
            raw = self._conv("head.mu", h)
            if head == "pixelwise":
                out["logits"] = raw
                out["mu"] = E.sigmoid(raw)
            else:
                out["mu"] = raw * self.scale
            if head == "p_sdf":
                out["sigma"] = E.softplus(self._conv("head.sigma", h)) + SIGMA_FLOOR
        else:
            col = E.column_mean(h)
            raw = E.column_affine(col, self.params["head.mu.w"], self.params["head.mu.b"])
            out["mu"] = raw * self.scale + (cfg.height - 1) / 2.0
            if head == "p_regr":
                s = E.column_affine(col, self.params["head.sigma.w"], self.params["head.sigma.b"])
                out["sigma"] = E.softplus(s) + SIGMA_FLOOR
        return out

    def get_flat(self):
        return np.concatenate([p.data.ravel() for p in self.params.values()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_parameters():
            raise ValueError(f"parameter blob has {flat.size} values, network needs {self.n_parameters()}")
        i = 0
        for p in self.params.values():
            n = p.data.size
            p.data[...] = flat[i:i + n].reshape(p.data.shape)
            i += n
