"""Factorized bilinear coding.

Per location ``v`` the code is

    c'_v = P (U~^T x_v  *  V~^T y_v)
    c_v  = sign(c'_v) * max(|c'_v| - lam / 2, 0)

where ``*`` is elementwise and ``P`` sums each consecutive block of ``r``
entries (one block per dictionary atom). Codes over all locations are
reduced with a coordinatewise max into the global representation ``z``.

``U~`` and ``V~`` are learned directly. ``derive_transforms`` builds them
from an explicit factorized dictionary and is kept as a cross-check of the
closed form against least squares.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import pair_locations
from .errors import MissingCache, ShapeMismatch, SingularSystem


@dataclass(frozen=True)
class ProjectionMatrix:
    """Binary ``k x rk`` block-sum operator, applied without materializing it."""

    k: int
    r: int

    def __post_init__(self):
        if self.k < 1 or self.r < 1:
            raise ValueError("k and r must be >= 1")

    def apply(self, h):
        if h.shape[-1] != self.k * self.r:
            raise ShapeMismatch(f"expected trailing size {self.k * self.r}, got {h.shape[-1]}")
        return h.reshape(*h.shape[:-1], self.k, self.r).sum(axis=-1)

    def transpose_apply(self, g):
        """``P^T g``: repeat each atom entry across its ``r`` slots."""
        return np.repeat(g, self.r, axis=-1)

    def dense(self):
        out = np.zeros((self.k, self.k * self.r))
        for l in range(self.k):
            out[l, l * self.r:(l + 1) * self.r] = 1.0
        return out


def build_projection(k, r):
    return ProjectionMatrix(int(k), int(r))


@dataclass
class FbcParams:
    U_tilde: np.ndarray  # p x rk
    V_tilde: np.ndarray  # q x rk
    lam: float = 0.001
    k: int = 16
    r: int = 1

    def __post_init__(self):
        rk = self.k * self.r
        if self.U_tilde.shape[1] != rk or self.V_tilde.shape[1] != rk:
            raise ShapeMismatch(
                f"transforms need {rk} columns, got {self.U_tilde.shape[1]} and {self.V_tilde.shape[1]}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def P(self):
        return build_projection(self.k, self.r)


def init_fbc(p, q, k, r, rng, dtype=np.float32):
    u = rng.standard_normal((p, r * k)) / np.sqrt(p)
    v = rng.standard_normal((q, r * k)) / np.sqrt(q)
    return u.astype(dtype), v.astype(dtype)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0)


def bilinear_pool(x, y):
    """Sum of per-location outer products, ``Z = sum_v x_v y_v^T``.

    ``x``: ``(N, p)``, ``y``: ``(N, q)``.
    """
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    if x.shape[0] != y.shape[0] or x.shape[0] < 1:
        raise ShapeMismatch("need the same N >= 1 locations in both streams")
    return x.T @ y


def fbc_preactivation(x, y, U_tilde, V_tilde, k, r):
    """``c'`` for any leading batch shape; also returns the two projections."""
    a = x @ U_tilde
    b = y @ V_tilde
    h = a * b
    return h.reshape(*h.shape[:-1], k, r).sum(axis=-1), a, b


def fbc_encode(x, y, params: FbcParams):
    """Closed-form sparse code of one (or a batch of) location pairs."""
    c_pre, _, _ = fbc_preactivation(np.asarray(x), np.asarray(y),
                                    params.U_tilde, params.V_tilde, params.k, params.r)
    return soft_threshold(c_pre, params.lam / 2)


@dataclass
class GlobalRepresentation:
    z: np.ndarray
    argmax_index: np.ndarray


def max_aggregate(codes):
    """Coordinatewise max over locations (axis -2), first index on ties."""
    codes = np.asarray(codes)
    if codes.ndim < 2 or codes.shape[-2] < 1:
        raise ShapeMismatch("need at least one code")
    idx = codes.argmax(axis=-2)
    z = np.take_along_axis(codes, idx[..., None, :], axis=-2)[..., 0, :]
    return GlobalRepresentation(z, idx)


@dataclass
class FbcCache:
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c_pre: np.ndarray
    argmax: np.ndarray
    lam: float
    k: int
    r: int


def fbc_forward_pairs(x, y, U_tilde, V_tilde, lam, k, r):
    """Encode ``(..., N, p)`` / ``(..., N, q)`` pairs and max-aggregate."""
    c_pre, a, b = fbc_preactivation(x, y, U_tilde, V_tilde, k, r)
    c = soft_threshold(c_pre, lam / 2)
    g = max_aggregate(c)
    return g, FbcCache(x, y, a, b, c_pre, g.argmax_index, lam, k, r)


def fbc_forward(fa, fb, params: FbcParams):
    """Feature maps ``(p, H, W)`` and ``(q, H, W)`` (optionally batched) to ``z``."""
    x, y = pair_locations(fa, fb)
    return fbc_forward_pairs(x, y, params.U_tilde, params.V_tilde, params.lam, params.k, params.r)


def fbc_backward(dz, cache: FbcCache | None, U_tilde, V_tilde):
    """Reverse pass of ``fbc_forward_pairs``.

    The gradient of ``z`` goes only to the winning location of each atom.
    The soft-threshold derivative is 1 strictly outside ``[-lam/2, lam/2]``
    and 0 on and inside it.

    Returns ``(dU_tilde, dV_tilde, dx, dy)``.
    """
    if cache is None:
        raise MissingCache("fbc_backward needs the cache from a forward pass")
    dc = np.zeros_like(cache.c_pre)
    np.put_along_axis(dc, cache.argmax[..., None, :], dz[..., None, :], axis=-2)
    dc = dc * (np.abs(cache.c_pre) > cache.lam / 2)
    dh = np.repeat(dc, cache.r, axis=-1)
    da = dh * cache.b
    db = dh * cache.a
    x2 = cache.x.reshape(-1, cache.x.shape[-1])
    y2 = cache.y.reshape(-1, cache.y.shape[-1])
    dU = x2.T @ da.reshape(-1, da.shape[-1])
    dV = y2.T @ db.reshape(-1, db.shape[-1])
    dx = da @ U_tilde.T
    dy = db @ V_tilde.T
    return dU, dV, dx, dy


def kink_signature(cache: FbcCache):
    active = np.abs(cache.c_pre) > cache.lam / 2
    return np.packbits(active).tobytes() + cache.argmax.astype(np.int64).tobytes()


# Explicit dictionary bridge ------------------------------------------------

@dataclass
class RawDictionary:
    """Atoms ``b_l = U_l V_l^T`` stored as column blocks of ``U`` (p x rk) and ``V`` (q x rk)."""

    U: np.ndarray
    V: np.ndarray
    k: int
    r: int

    def __post_init__(self):
        rk = self.k * self.r
        if self.U.shape[1] != rk or self.V.shape[1] != rk:
            raise ShapeMismatch(f"dictionary factors need {rk} columns")

    @classmethod
    def from_blocks(cls, U_blocks, V_blocks):
        U_blocks = [np.atleast_2d(np.asarray(u, dtype=float)) for u in U_blocks]
        V_blocks = [np.atleast_2d(np.asarray(v, dtype=float)) for v in V_blocks]
        r = U_blocks[0].shape[1]
        return cls(np.hstack(U_blocks), np.hstack(V_blocks), len(U_blocks), r)

    def atom(self, l):
        s = slice(l * self.r, (l + 1) * self.r)
        return self.U[:, s] @ self.V[:, s].T


def atom_gram(raw: RawDictionary):
    """Frobenius Gram matrix of the atoms: ``P ((U^T U) * (V^T V)) P^T``."""
    proj = build_projection(raw.k, raw.r)
    inner = (raw.U.T @ raw.U) * (raw.V.T @ raw.V)
    return proj.apply(proj.apply(inner).T).T


def _solve_gram(raw, ridge):
    gram = atom_gram(raw) + ridge * np.eye(raw.k)
    if not np.all(np.isfinite(gram)):
        raise SingularSystem("non-finite atom Gram matrix")
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularSystem(f"atom Gram matrix is ill-conditioned (cond={cond:.3g})")
    return np.linalg.inv(gram)


def transform_weights(raw: RawDictionary, ridge=1e-8):
    """``Q = ((G + ridge I)^-1 P)^T``, shape ``rk x k``."""
    proj = build_projection(raw.k, raw.r)
    return (_solve_gram(raw, ridge) @ proj.dense()).T


def derive_transforms(raw: RawDictionary, ridge=1e-8):
    """Learned-form transforms ``(U_tilde, V_tilde)`` for an explicit dictionary.

    Rank slot ``a`` of atom ``l`` keeps its own factor columns and the
    ``U`` column is scaled by the matching entry of ``q_l``:
    ``u~_{l,a} = Q[(l,a), l] * u_{l,a}``, ``v~_{l,a} = v_{l,a}``. With a
    diagonal Gram matrix (mutually orthogonal atoms, or ``k = 1``) the
    closed-form code at ``lam = 0`` is then the exact least-squares code.
    """
    Q = transform_weights(raw, ridge)
    own = np.array([Q[j, j // raw.r] for j in range(raw.k * raw.r)])
    return raw.U * own[None, :], raw.V.copy()


def least_squares_code(raw: RawDictionary, x, y, ridge=0.0):
    """Coefficients minimizing ``||x y^T - sum_l c_l U_l V_l^T||_F^2 + ridge ||c||^2``."""
    proj = build_projection(raw.k, raw.r)
    rhs = proj.apply((raw.U.T @ x) * (raw.V.T @ y))
    return _solve_gram(raw, ridge) @ rhs
