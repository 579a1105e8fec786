"""Two-stream classifier: per-color-space backbones, a fusion layer, softmax head.

Fusion modes:

- ``fbc``: factorized bilinear coding across the two streams (MC_FBC when
  the streams see different color spaces).
- ``concat``: global-average-pooled features of both streams concatenated.
- ``score_mean`` / ``score_max``: one head per stream, bona fide
  probabilities fused by mean or max.
- ``single``: stream ``a`` only, global average pooling.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import backbone as bb
from . import fbc
from .colorspace import SPACES
from .errors import ConfigError, ShapeMismatch
from .loss import FocalParams, focal_loss, loss_backward, softmax

FUSIONS = ("fbc", "concat", "score_mean", "score_max", "single")


@dataclass
class FbcConfig:
    k: int = 32
    r: int = 1
    lam: float = 0.001
    normalize: str = "none"

    def __post_init__(self):
        if self.k < 1 or self.r < 1:
            raise ConfigError("k and r must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.normalize not in ("none", "l2"):
            raise ConfigError(f"unknown normalization {self.normalize!r}")


@dataclass
class ModelConfig:
    color_spaces: list = field(default_factory=lambda: ["RGB", "YCbCr"])
    fusion: str = "fbc"
    backbone: bb.BackboneConfig = field(default_factory=bb.BackboneConfig)
    fbc: FbcConfig = field(default_factory=FbcConfig)

    def __post_init__(self):
        self.color_spaces = list(self.color_spaces)
        if len(self.color_spaces) != 2 or any(s not in SPACES for s in self.color_spaces):
            raise ConfigError(f"color_spaces must be two of {SPACES}, got {self.color_spaces}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}")
        if isinstance(self.backbone, dict):
            self.backbone = bb.BackboneConfig(**self.backbone)
        if isinstance(self.fbc, dict):
            self.fbc = FbcConfig(**self.fbc)

    def to_dict(self):
        return asdict(self)


def _head_init(rng, fan_in, dtype):
    W = rng.standard_normal((fan_in, 2)) / np.sqrt(fan_in)
    return W.astype(dtype), np.zeros(2, dtype=dtype)


class Model:
    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params
        self.corrupt_backward = False

    @classmethod
    def init(cls, cfg: ModelConfig, rng, dtype=np.float32):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        bcfg = cfg.backbone
        params = bb.init_backbone(bcfg, rng, prefix="a.", dtype=dtype)
        if not bcfg.share and cfg.fusion != "single":
            params.update(bb.init_backbone(bcfg, rng, prefix="b.", dtype=dtype))
        c = bcfg.out_channels
        if cfg.fusion == "fbc":
            u, v = fbc.init_fbc(c, c, cfg.fbc.k, cfg.fbc.r, rng, dtype)
            params["fbc.U"], params["fbc.V"] = u, v
            params["head.W"], params["head.b"] = _head_init(rng, cfg.fbc.k, dtype)
        elif cfg.fusion == "concat":
            params["head.W"], params["head.b"] = _head_init(rng, 2 * c, dtype)
        elif cfg.fusion == "single":
            params["head.W"], params["head.b"] = _head_init(rng, c, dtype)
        else:
            params["head_a.W"], params["head_a.b"] = _head_init(rng, c, dtype)
            params["head_b.W"], params["head_b.b"] = _head_init(rng, c, dtype)
        return cls(cfg, params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype):
        out = Model(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()})
        out.corrupt_backward = self.corrupt_backward
        return out

    def copy(self):
        return self.astype(self.dtype)

    def _prefix_b(self):
        return "a." if self.cfg.backbone.share else "b."

    def _uses_stream_b(self):
        return self.cfg.fusion != "single"

    # forward --------------------------------------------------------------

    def forward(self, xa, xb):
        """Bona fide scores ``(B,)``, per-head probabilities and a backward cache."""
        p = self.params
        cfg = self.cfg
        if xa.dtype != self.dtype:
            xa = xa.astype(self.dtype)
        fa, ca = bb.backbone_forward(xa, p, cfg.backbone, "a.")
        cache = {"ca": ca, "fa_shape": fa.shape}
        if self._uses_stream_b():
            if xb.dtype != self.dtype:
                xb = xb.astype(self.dtype)
            fb, cb = bb.backbone_forward(xb, p, cfg.backbone, self._prefix_b())
            cache["cb"] = cb
            cache["fb_shape"] = fb.shape

        if cfg.fusion == "fbc":
            x, y = bb.pair_locations(fa, fb)
            g, fc = fbc.fbc_forward_pairs(x, y, p["fbc.U"], p["fbc.V"],
                                          cfg.fbc.lam, cfg.fbc.k, cfg.fbc.r)
            z = g.z
            cache["fbc"] = fc
            if cfg.fbc.normalize == "l2":
                norm = np.sqrt((z * z).sum(axis=-1, keepdims=True)) + 1e-12
                cache["norm"] = (z, norm)
                z = z / norm
            feats = {"head": z}
        elif cfg.fusion == "concat":
            feats = {"head": np.concatenate([fa.mean(axis=(2, 3)), fb.mean(axis=(2, 3))], axis=1)}
        elif cfg.fusion == "single":
            feats = {"head": fa.mean(axis=(2, 3))}
        else:
            feats = {"head_a": fa.mean(axis=(2, 3)), "head_b": fb.mean(axis=(2, 3))}

        probs = {}
        for name, f in feats.items():
            probs[name] = softmax(f @ p[f"{name}.W"] + p[f"{name}.b"])
        cache["feats"] = feats
        cache["probs"] = probs

        if "head" in probs:
            score = probs["head"][:, 1]
        elif cfg.fusion == "score_mean":
            score = 0.5 * (probs["head_a"][:, 1] + probs["head_b"][:, 1])
        else:
            score = np.maximum(probs["head_a"][:, 1], probs["head_b"][:, 1])
        return score, probs, cache

    def scores(self, xa, xb, batch_size=64):
        out = []
        for s in range(0, len(xa), batch_size):
            out.append(self.forward(xa[s:s + batch_size], xb[s:s + batch_size])[0])
        return np.concatenate(out) if out else np.zeros(0, dtype=self.dtype)

    # loss + backward ------------------------------------------------------

    def loss(self, xa, xb, labels, focal: FocalParams):
        """Mean focal loss over the batch (summed over heads for score fusion)."""
        _, probs, _ = self.forward(xa, xb)
        return float(sum(np.mean(focal_loss(pr, labels, focal)) for pr in probs.values()))

    def loss_and_grads(self, xa, xb, labels, focal: FocalParams):
        score, probs, cache = self.forward(xa, xb)
        labels = np.asarray(labels)
        n = len(labels)
        total = 0.0
        clamped = 0
        p = self.params
        cfg = self.cfg
        grads = {}
        dfeats = {}
        for name, pr in probs.items():
            l, nc = focal_loss(pr, labels, focal, return_clamped=True)
            total += float(np.mean(l))
            clamped += nc
            dlogit = loss_backward(pr, labels, focal) / n
            f = cache["feats"][name]
            grads[f"{name}.W"] = f.T @ dlogit
            grads[f"{name}.b"] = dlogit.sum(axis=0)
            dfeats[name] = dlogit @ p[f"{name}.W"].T

        fa_shape = cache["fa_shape"]
        ha, wa = fa_shape[2], fa_shape[3]
        dfb = None
        if cfg.fusion == "fbc":
            dz = dfeats["head"]
            if cfg.fbc.normalize == "l2":
                z, norm = cache["norm"]
                u = z / norm
                dz = (dz - u * (dz * u).sum(axis=-1, keepdims=True)) / norm
            dU, dV, dx, dy = fbc.fbc_backward(dz, cache["fbc"], p["fbc.U"], p["fbc.V"])
            if self.corrupt_backward:
                dU = dU * 1.1
            grads["fbc.U"], grads["fbc.V"] = dU, dV
            dfa = bb.unpair_locations(dx, ha, wa)
            dfb = bb.unpair_locations(dy, ha, wa)
        elif cfg.fusion == "concat":
            c = fa_shape[1]
            d = dfeats["head"]
            dfa = np.broadcast_to((d[:, :c] / (ha * wa))[:, :, None, None], fa_shape).copy()
            dfb = np.broadcast_to((d[:, c:] / (ha * wa))[:, :, None, None], cache["fb_shape"]).copy()
        elif cfg.fusion == "single":
            dfa = np.broadcast_to((dfeats["head"] / (ha * wa))[:, :, None, None], fa_shape).copy()
        else:
            dfa = np.broadcast_to((dfeats["head_a"] / (ha * wa))[:, :, None, None], fa_shape).copy()
            dfb = np.broadcast_to((dfeats["head_b"] / (ha * wa))[:, :, None, None],
                                  cache["fb_shape"]).copy()

        ga, _ = bb.backbone_backward(dfa, cache["ca"], p, cfg.backbone, "a.")
        grads.update(ga)
        if dfb is not None:
            gb, _ = bb.backbone_backward(dfb, cache["cb"], p, cfg.backbone, self._prefix_b())
            for key, val in gb.items():
                grads[key] = grads[key] + val if key in grads else val

        dtype = self.dtype
        grads = {k: np.asarray(v, dtype=dtype) for k, v in grads.items()}
        stats = {"loss": total, "clamped": clamped, "score": score}
        return total, grads, stats

    def kink_signature(self, xa, xb):
        """Identifies every piecewise-linear branch taken by a forward pass."""
        return self.signature_of(self.forward(xa, xb)[2])

    @staticmethod
    def signature_of(cache):
        sig = bb.kink_signature(cache["ca"])
        if "cb" in cache:
            sig += bb.kink_signature(cache["cb"])
        if "fbc" in cache:
            sig += fbc.kink_signature(cache["fbc"])
        return sig
