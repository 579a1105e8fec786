"""Small convolutional feature extractor feeding the FBC layer.

Each block is conv(k x k, pad k//2) -> ReLU -> 2x2 max pool. The output of
the last block is the feature map whose spatial locations are paired
across the two color streams.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels
from .errors import ShapeMismatch, ConfigError


@dataclass
class BackboneConfig:
    blocks: int = 3
    channels: list = field(default_factory=lambda: [8, 16, 16])
    kernel: int = 3
    input_size: int = 32
    share: bool = False

    def __post_init__(self):
        self.channels = [int(c) for c in self.channels]
        if self.blocks < 1:
            raise ConfigError("backbone needs at least one block")
        if len(self.channels) != self.blocks:
            raise ConfigError(f"{self.blocks} blocks but {len(self.channels)} channel counts")
        if any(c <= 0 for c in self.channels):
            raise ConfigError("channel counts must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("kernel size must be odd")
        if self.output_size < 2:
            raise ConfigError(
                f"input {self.input_size} leaves a {self.output_size}x{self.output_size} grid; need >= 2")

    @property
    def out_channels(self):
        return self.channels[-1]

    @property
    def output_size(self):
        return self.input_size >> self.blocks

    def to_dict(self):
        return asdict(self)


@dataclass
class FeatureMap:
    data: np.ndarray  # (B, C, H', W') or (C, H', W')
    source_space: str = "RGB"


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator, prefix="", dtype=np.float32):
    """He-normal conv weights, zero biases."""
    params = {}
    c_in = 3
    for i, c_out in enumerate(cfg.channels):
        fan_in = c_in * cfg.kernel * cfg.kernel
        w = rng.standard_normal((c_out, c_in, cfg.kernel, cfg.kernel)) * np.sqrt(2.0 / fan_in)
        params[f"{prefix}conv{i}.w"] = w.astype(dtype)
        params[f"{prefix}conv{i}.b"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    return params


def _impl(backend):
    return kernels.IMPLEMENTATIONS[backend or kernels.BACKEND]


def backbone_forward(x, params, cfg: BackboneConfig, prefix="", backend=None):
    """Run the conv stack on a ``(B, 3, H, W)`` batch.

    Returns the final activations and a cache for ``backbone_backward``.
    """
    conv_f, _, pool_f, _ = _impl(backend)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
        raise ShapeMismatch(
            f"expected (B, 3, {cfg.input_size}, {cfg.input_size}), got {x.shape}")
    cache = []
    h = x
    for i in range(cfg.blocks):
        w = params[f"{prefix}conv{i}.w"]
        b = params[f"{prefix}conv{i}.b"]
        pre = conv_f(h, w, b)
        act = np.maximum(pre, 0)
        pooled, idx = pool_f(act)
        cache.append((h, pre, idx))
        h = pooled
    return h, cache


def backbone_backward(dout, cache, params, cfg: BackboneConfig, prefix="", backend=None):
    """Gradients of every conv weight/bias plus the input gradient."""
    _, conv_b, _, pool_b = _impl(backend)
    grads = {}
    g = dout
    for i in reversed(range(cfg.blocks)):
        h_in, pre, idx = cache[i]
        g = pool_b(g, idx, pre.shape)
        g = g * (pre > 0)
        dx, dw, db = conv_b(h_in, params[f"{prefix}conv{i}.w"], g)
        grads[f"{prefix}conv{i}.w"] = dw
        grads[f"{prefix}conv{i}.b"] = db
        g = dx
    return grads, g


def kink_signature(cache):
    """Bytes identifying the ReLU masks and pooling winners of a forward pass."""
    parts = []
    for _, pre, idx in cache:
        parts.append(np.packbits(pre > 0).tobytes())
        parts.append(idx.tobytes())
    return b"".join(parts)


def pair_locations(fa: np.ndarray, fb: np.ndarray):
    """Per-location feature vectors from two maps on the same grid.

    ``fa``: ``(..., p, H, W)``, ``fb``: ``(..., q, H, W)``. Returns
    ``x`` of shape ``(..., N, p)`` and ``y`` of shape ``(..., N, q)`` with
    ``N = H * W`` in row-major order.
    """
    if isinstance(fa, FeatureMap):
        fa = fa.data
    if isinstance(fb, FeatureMap):
        fb = fb.data
    if fa.shape[-2:] != fb.shape[-2:]:
        raise ShapeMismatch(f"grid mismatch {fa.shape[-2:]} vs {fb.shape[-2:]}")
    if fa.shape[:-3] != fb.shape[:-3]:
        raise ShapeMismatch("batch dimensions differ")
    n = fa.shape[-2] * fa.shape[-1]
    x = fa.reshape(*fa.shape[:-2], n)
    y = fb.reshape(*fb.shape[:-2], n)
    return np.swapaxes(x, -1, -2), np.swapaxes(y, -1, -2)


def unpair_locations(dx, h, w):
    """Inverse of ``pair_locations`` for one stream (gradient routing)."""
    out = np.swapaxes(dx, -1, -2)
    return np.ascontiguousarray(out.reshape(*out.shape[:-1], h, w))
