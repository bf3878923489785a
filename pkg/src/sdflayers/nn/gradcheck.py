"""Central finite-difference checks of the reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from sdflayers.nn import engine as E
from sdflayers.nn.losses import LOSS_FOR_HEAD, head_loss
from sdflayers.nn.network import HEADS, TinyUNet, TinyUNetConfig
from sdflayers.nn.train import make_targets

STEP = 1e-4
TOLERANCE = 1e-4
# denominators below this are treated as absolute comparisons
FLOOR = 1e-6


def relative_error(analytic, numeric):
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(f, array, h=STEP):
    """Central differences of the scalar ``f()`` w.r.t. every entry of ``array`` (mutated in place)."""
    g = np.empty_like(array)
    flat, gflat = array.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return g


def check_function(fn, arrays, h=STEP):
    """Max relative error of the autodiff gradient of ``fn(*tensors)`` over all inputs."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [E.parameter(a) for a in arrays]
    out = fn(*leaves)
    out.backward()
    worst = 0.0
    for leaf, a in zip(leaves, arrays):
        def f():
            return float(fn(*[E.Tensor(b) for b in arrays]).data)
        num = numeric_grad(f, a, h)
        worst = max(worst, relative_error(leaf.grad, num))
    return worst


def _away_from(x, points, gap, rng):
    """Resample entries lying within ``gap`` of any kink location."""
    x = x.copy()
    for _ in range(100):
        bad = np.zeros(x.shape, dtype=bool)
        for p in points:
            bad |= np.abs(x - p) < gap
        if not bad.any():
            break
        x[bad] = rng.normal(size=int(bad.sum()))
    return x


def primitive_cases(rng):
    """``name -> (fn, inputs)`` covering every graph primitive."""
    def r(*shape):
        return rng.normal(size=shape)

    projections = {}

    def w(t):
        # fixed random projection per output shape gives a generic scalar
        if t.shape not in projections:
            projections[t.shape] = rng.normal(size=t.shape)
        return (t * E.Tensor(projections[t.shape])).sum()

    pos = np.abs(r(3, 4)) + 0.5
    kinks = _away_from(r(3, 4) * 2, (0.0, 1.5, -1.5), 10 * STEP, rng)
    x4 = r(2, 3, 8, 8)
    cases = {
        "add": (lambda a, b: w(a + b), [r(3, 4), r(4)]),
        "sub": (lambda a, b: w(a - b), [r(3, 4), r(3, 1)]),
        "mul": (lambda a, b: w(a * b), [r(3, 4), r(1, 4)]),
        "div": (lambda a, b: w(a / b), [r(3, 4), pos]),
        "power": (lambda a: w(E.power(a, 3)), [r(3, 4)]),
        "log": (lambda a: w(E.log(a)), [pos]),
        "exp": (lambda a: w(E.exp(a)), [r(3, 4)]),
        "absolute": (lambda a: w(E.absolute(a)), [kinks]),
        "clamp": (lambda a: w(E.clamp(a, 1.5)), [kinks]),
        "leaky_relu": (lambda a: w(E.leaky_relu(a, 0.1)), [kinks]),
        "sigmoid": (lambda a: w(E.sigmoid(a)), [r(3, 4) * 3]),
        "softplus": (lambda a: w(E.softplus(a)), [r(3, 4) * 3]),
        "sum_axis": (lambda a: w(E.tsum(a, axis=1)), [r(3, 4, 2)]),
        "mean": (lambda a: w(E.tmean(a, axis=0)), [r(3, 4)]),
        "concat": (lambda a, b: w(E.concat([a, b], axis=1)), [r(2, 2, 3), r(2, 3, 3)]),
        "index": (lambda a: w(E.index(a, (slice(None), 1))), [r(3, 4)]),
        "flip_last": (lambda a: w(E.flip_last(a)), [r(2, 5)]),
        "conv2d": (lambda x, k, b: w(E.conv2d(x, k, b)), [x4, r(4, 3, 3, 3), r(4)]),
        "conv2d_stride2": (lambda x, k, b: w(E.conv2d(x, k, b, stride=2)), [x4, r(4, 3, 3, 3), r(4)]),
        "conv2d_1x1": (lambda x, k, b: w(E.conv2d(x, k, b)), [x4, r(2, 3, 1, 1), r(2)]),
        "upsample2x": (lambda a: w(E.upsample2x(a)), [r(2, 3, 4, 4)]),
        "column_mean": (lambda a: w(E.column_mean(a)), [r(2, 3, 5, 6)]),
        "column_affine": (lambda a, k, b: w(E.column_affine(a, k, b)), [r(2, 3, 6), r(4, 3), r(4)]),
    }
    return cases


def check_primitives(seed=0, h=STEP):
    rng = np.random.default_rng(seed)
    return {name: check_function(fn, ins, h) for name, (fn, ins) in primitive_cases(rng).items()}


def tiny_config(head, seed=0):
    """Network with about a thousand parameters on 8x8 inputs."""
    return TinyUNetConfig(height=8, width=8, levels=2, base_channels=2, n_layers=2, head=head, seed=seed)


def _batch(cfg, rng, n=2):
    x = rng.uniform(0.0, 1.0, (n, cfg.height, cfg.width))
    curves = np.sort(rng.uniform(1.0, cfg.height - 2.0, (n, cfg.n_layers, cfg.width)), axis=1)
    return x, make_targets(curves, cfg.head, (cfg.height, cfg.width))


def kink_margin(fn):
    """Closest approach of any piecewise-linear op input to its kink during ``fn()``."""
    seen = [np.inf]
    originals = {name: getattr(E, name) for name in ("leaky_relu", "absolute", "clamp")}

    def watch(name, kinks):
        def wrapped(a, *args, **kw):
            v = E.as_tensor(a).data
            for k in kinks(*args, **kw):
                seen[0] = min(seen[0], float(np.min(np.abs(v - k))) if v.size else np.inf)
            return originals[name](a, *args, **kw)
        return wrapped

    E.leaky_relu = watch("leaky_relu", lambda *a, **k: (0.0,))
    E.absolute = watch("absolute", lambda *a, **k: (0.0,))
    E.clamp = watch("clamp", lambda delta, *a, **k: (-delta, delta))
    try:
        fn()
    finally:
        for name, f in originals.items():
            setattr(E, name, f)
    return seen[0]


def check_head(head, seed=0, h=STEP, delta=3.0, margin=1e-3, tries=200):
    """Max relative error over every parameter of a tiny network with ``head``'s loss.

    A small clamp radius puts part of the field outside ``[-delta, delta]`` so
    the clamped branches are exercised too. Parameters are redrawn until no
    leaky-rectifier, absolute-value or clamp input lies within ``margin`` of
    its kink, where the derivative is undefined and differences are meaningless.
    """
    rng = np.random.default_rng(seed)
    cfg = tiny_config(head, seed)
    model = TinyUNet(cfg)
    x, target = _batch(cfg, rng)
    base = model.get_flat()

    def loss():
        return head_loss(model.forward(x), target, head, delta, LOSS_FOR_HEAD[head])

    for _ in range(tries):
        # perturb away from the near-zero head init so every path carries signal
        model.set_flat(base + 0.3 * rng.normal(size=base.size))
        if kink_margin(loss) > margin:
            break
    else:
        raise RuntimeError(f"no kink-free parameter draw for {head!r} in {tries} tries")

    model.zero_grad()
    loss().backward()
    worst = 0.0
    for p in model.parameters():
        num = numeric_grad(lambda: float(loss().data), p.data, h)
        worst = max(worst, relative_error(p.grad, num))
    return worst


def run(seed=0, h=STEP, heads=HEADS):
    """All primitive and head checks: ``(results, max_error)``."""
    results = {f"primitive:{k}": v for k, v in check_primitives(seed, h).items()}
    for head in heads:
        results[f"head:{head}"] = check_head(head, seed, h)
    return results, max(results.values())
