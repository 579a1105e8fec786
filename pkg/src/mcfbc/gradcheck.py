"""Finite-difference audit of the hand-written backward passes.

Every parameter coordinate is perturbed by +-h (central differences) in
64-bit. A coordinate is skipped as kink-adjacent when either perturbation
changes any piecewise branch of the network: a ReLU mask, a max-pool
winner, a soft-threshold active set or a max-aggregation winner.

Relative error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``;
the floor keeps gradients that are zero up to rounding from dominating.
"""
from __future__ import annotations

import numpy as np

from .backbone import BackboneConfig
from .colorspace import convert_batch
from .loss import FocalParams, focal_loss
from .model import Model, ModelConfig, FbcConfig

SIZES = {
    "tiny": dict(blocks=2, channels=[4, 6], input_size=8, k=8),
    "small": dict(blocks=3, channels=[8, 16, 8], input_size=24, k=16),
}


def audit_model(seed, size="small", fusion="fbc", r=1, lam=0.001):
    """A float64 model and a single random sample; the label alternates with ``seed``."""
    sz = SIZES[size]
    cfg = ModelConfig(["RGB", "YCbCr"], fusion,
                      BackboneConfig(sz["blocks"], sz["channels"], 3, sz["input_size"]),
                      FbcConfig(k=sz["k"], r=r, lam=lam))
    rng = np.random.default_rng(seed)
    model = Model.init(cfg, rng, np.float64)
    n = sz["input_size"]
    rgb = rng.random((1, 3, n, n))
    sample = (rgb, convert_batch(rgb, "YCbCr"), np.array([seed % 2]))
    return model, sample


def grad_check(model: Model, sample, h=1e-5, tol=1e-4, focal=FocalParams(), floor=1e-6,
               max_per_group=None, rng=None):
    """Compare analytic and central-difference gradients on every parameter group."""
    model = model.astype(np.float64)
    xa, xb, labels = sample
    xa = np.asarray(xa, dtype=np.float64)
    xb = np.asarray(xb, dtype=np.float64)
    _, grads, _ = model.loss_and_grads(xa, xb, labels, focal)
    _, _, cache = model.forward(xa, xb)
    base = Model.signature_of(cache)
    near = 0
    if "fbc" in cache:
        fc = cache["fbc"]
        near = int((np.abs(np.abs(fc.c_pre) - fc.lam / 2) < 10 * h).sum())

    def probe():
        _, probs, cache = model.forward(xa, xb)
        loss = float(sum(np.mean(focal_loss(p, labels, focal)) for p in probs.values()))
        return loss, Model.signature_of(cache)

    groups = {}
    worst = {"rel_err": 0.0, "coordinate": None}
    skipped = []
    checked = 0
    for name in sorted(model.params):
        w = model.params[name]
        flat = w.reshape(-1)
        coords = np.arange(flat.size)
        if max_per_group is not None and flat.size > max_per_group:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, max_per_group, replace=False))
        g = grads[name].reshape(-1)
        gworst = 0.0
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            lp, sp = probe()
            flat[i] = old - h
            lm, sm = probe()
            flat[i] = old
            if sp != base or sm != base:
                skipped.append(f"{name}[{int(i)}]")
                continue
            num = (lp - lm) / (2 * h)
            a = float(g[i])
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            checked += 1
            gworst = max(gworst, rel)
            if rel > worst["rel_err"] or worst["coordinate"] is None:
                worst = {"rel_err": rel, "coordinate": f"{name}[{int(i)}]",
                         "analytic": a, "numeric": num}
        groups[name] = {"size": int(flat.size), "checked": int(len(coords)), "max_rel_err": gworst}

    return {
        "max_rel_err": worst["rel_err"],
        "worst_coordinate": worst,
        "skipped_kinks": len(skipped),
        "skipped_coordinates": skipped,
        "near_threshold_codes": near,
        "checked": checked,
        "groups": groups,
        "h": h,
        "tol": tol,
        "passed": bool(worst["rel_err"] <= tol),
    }
