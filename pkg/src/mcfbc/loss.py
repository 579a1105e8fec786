"""Softmax head and focal loss for the two-class bona fide / attack decision.

Class index 0 is attack, 1 is bona fide; the bona fide probability is the
score passed on to the metrics.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

P_MIN = 1e-12


@dataclass
class FocalParams:
    alpha: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    def to_dict(self):
        return asdict(self)


def logits(z, W, b):
    return z @ W + b


def softmax(logit):
    shifted = logit - logit.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_logits(z, W, b):
    return softmax(logits(z, W, b))


def _true_prob(probs, label):
    probs = np.asarray(probs, dtype=float)
    label = np.asarray(label)
    return np.take_along_axis(np.atleast_2d(probs), np.atleast_1d(label)[:, None], axis=-1)[:, 0]


def focal_loss(probs, label, fp: FocalParams = FocalParams(), return_clamped=False):
    """``-alpha * (1 - p_t)^gamma * log(p_t)`` per sample.

    ``p_t`` below 1e-12 is clamped; ``return_clamped`` also returns how many
    samples hit the clamp.
    """
    pt = _true_prob(probs, label)
    clamped = pt < P_MIN
    pt = np.maximum(pt, P_MIN)
    loss = -fp.alpha * (1.0 - pt) ** fp.gamma * np.log(pt)
    if np.ndim(label) == 0:
        loss = loss[0]
    if return_clamped:
        return loss, int(clamped.sum())
    return loss


def cross_entropy(probs, label):
    pt = np.maximum(_true_prob(probs, label), P_MIN)
    out = -np.log(pt)
    return out[0] if np.ndim(label) == 0 else out


def loss_backward(probs, label, fp: FocalParams = FocalParams()):
    """Gradient of the per-sample focal loss w.r.t. the logits."""
    probs = np.atleast_2d(probs)
    label = np.atleast_1d(label)
    pt = np.take_along_axis(probs, label[:, None], axis=-1)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, label[:, None], 1.0, axis=-1)
    one_minus = 1.0 - pt
    pt_safe = np.maximum(pt, P_MIN)
    if fp.gamma == 0:
        focus = np.zeros_like(pt)
    else:
        # gamma * (1-p)^(gamma-1) * p * log p, which tends to 0 as p -> 1
        with np.errstate(divide="ignore", invalid="ignore"):
            focus = fp.gamma * one_minus ** (fp.gamma - 1) * pt_safe * np.log(pt_safe)
        focus = np.where(one_minus > 0, focus, 0.0)
    scale = fp.alpha * (focus - one_minus ** fp.gamma)
    return (scale * (onehot - probs)).astype(probs.dtype, copy=False)
