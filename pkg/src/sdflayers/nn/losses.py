"""Differentiable training objectives, one per head.

These mirror the plain-numpy losses in :mod:`sdflayers.prob` but are built
from graph primitives so they can be back-propagated. Both are summed over
every element (no mean reduction unless requested).
"""

from __future__ import annotations

import numpy as np

from sdflayers.nn import engine as E

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def _reduce(t, reduction):
    return t.sum() if reduction == "sum" else t.mean()


def clamped_l1(mu, target, delta, reduction="sum"):
    target_c = np.clip(target, -delta, delta)
    return _reduce(E.absolute(E.clamp(mu, delta) - target_c), reduction)


def clamped_l2(mu, target, delta, reduction="sum"):
    """Half clamped squared error; the unit-variance limit of :func:`clamped_nll`."""
    target_c = np.clip(target, -delta, delta)
    r = E.clamp(mu, delta) - target_c
    return _reduce(r * r * 0.5, reduction)


def clamped_nll(mu, sigma, target, delta, reduction="sum"):
    """Clamped residual over unclamped sigma; the ln(2 pi) constant is omitted."""
    target_c = np.clip(target, -delta, delta)
    r = E.clamp(mu, delta) - target_c
    var = sigma * sigma
    return _reduce((r * r / var + E.log(var)) * 0.5, reduction)


def gaussian_nll(mu, sigma, target, reduction="sum"):
    """Full Gaussian negative log-likelihood including the constant term."""
    r = mu - target
    if sigma is None:
        per = r * r * 0.5 + HALF_LOG_2PI
    else:
        var = sigma * sigma
        per = (r * r / var + E.log(var)) * 0.5 + HALF_LOG_2PI
    return _reduce(per, reduction)


def binary_cross_entropy_logits(logits, target, reduction="sum"):
    """BCE evaluated from logits: softplus(z) - t*z."""
    return _reduce(E.softplus(logits) - logits * target, reduction)


LOSS_FOR_HEAD = {
    "pixelwise": "bce",
    "regr": "nll",
    "p_regr": "nll",
    "sdf": "clamped_l1",
    "p_sdf": "clamped_nll",
}


def head_loss(outputs, target, head, delta, kind=None, reduction="sum"):
    kind = kind or LOSS_FOR_HEAD[head]
    mu = outputs["mu"]
    if kind == "bce":
        return binary_cross_entropy_logits(outputs["logits"], target, reduction)
    if kind == "nll":
        return gaussian_nll(mu, outputs.get("sigma"), target, reduction)
    if kind == "clamped_l1":
        return clamped_l1(mu, target, delta, reduction)
    if kind == "clamped_l2":
        return clamped_l2(mu, target, delta, reduction)
    if kind == "clamped_nll":
        return clamped_nll(mu, outputs["sigma"], target, delta, reduction)
    raise ValueError(f"unknown loss kind {kind!r}")
