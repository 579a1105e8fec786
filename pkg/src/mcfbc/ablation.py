"""Desk-scale color-space ablation on the synthetic dataset.

Three variants share every hyperparameter except the fusion inputs:

- ``dual``: RGB + YCbCr streams fused by FBC
- ``rgb``: two RGB streams fused by FBC
- ``concat``: RGB + YCbCr, pooled features concatenated

The backbones are trained from scratch, so the step size is lower than the
fine-tuning default in ``TrainConfig`` (0.002 for 40 epochs). At 0.01 the
FBC variants diverge within a few epochs.
"""
from __future__ import annotations

import time

import numpy as np

from . import metrics
from .data import generate_synthetic, load_manifest, load_split
from .train import TrainConfig, train

VARIANTS = {
    "dual": (["RGB", "YCbCr"], "fbc"),
    "rgb": (["RGB", "RGB"], "fbc"),
    "concat": (["RGB", "YCbCr"], "concat"),
}

DESK = dict(lr0=0.002, lr_floor=1e-4, epochs=40)


def ablation_config(variant, seed, **overrides):
    spaces, fusion = VARIANTS[variant]
    return TrainConfig(**{**DESK, **overrides}, seed=seed, color_spaces=spaces, fusion=fusion)


def load_desk_data(root, seed=0, n_per_class=200, size=32):
    """Generate the dataset under ``root`` if needed and return (train, valid, test)."""
    path = root / "manifest.csv"
    if not path.exists():
        generate_synthetic(root, seed=seed, n_per_class=n_per_class, size=size)
    m = load_manifest(path)
    return tuple(load_split(m, s) for s in ("train", "valid", "test"))


def run_one(variant, seed, sets, **overrides):
    tr, va, te = sets
    cfg = ablation_config(variant, seed, **overrides)
    t0 = time.perf_counter()
    state = train(cfg, tr, va)
    seconds = time.perf_counter() - t0
    xa, xb = te.streams(cfg.color_spaces)
    rep = metrics.report(state.selected_model().scores(xa, xb), te.labels)
    return {"variant": variant, "seed": seed, "accuracy": rep["accuracy"], "acer": rep["acer"],
            "best_epoch": state.best_epoch, "seconds": seconds}


def run_ablation(sets, seeds=range(5), variants=tuple(VARIANTS), **overrides):
    runs = [run_one(v, s, sets, **overrides) for v in variants for s in seeds]
    means = {v: float(np.mean([r["accuracy"] for r in runs if r["variant"] == v])) for v in variants}
    return runs, means
