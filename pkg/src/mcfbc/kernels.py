"""Convolution and pooling kernels.

Two implementations of each kernel live here: numba-compiled loops and a
vectorized numpy path. ``FBC_NUMBA=0`` forces the numpy path; otherwise
numba is used when importable. ``FBC_THREADS`` caps the numba worker count
(0 or unset means numba's default).

Layouts are ``(batch, channels, height, width)``. Convolutions are
stride 1 with ``kernel // 2`` zero padding so spatial size is preserved.
Max pooling is 2x2, stride 2, ties routed to the first position in
row-major window order.
"""
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError

try:
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe, which warns on older system TBB builds
        numba.config.THREADING_LAYER = "omp"
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


def _flag(name, default):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    return raw.strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _flag("FBC_NUMBA", True)


def set_threads(n=None):
    """Apply ``FBC_THREADS`` (or ``n``) to numba. Returns the active count."""
    if not HAVE_NUMBA:
        return 1
    if n is None:
        raw = os.environ.get("FBC_THREADS", "0") or "0"
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"FBC_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("thread count must be >= 0")
    if n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return numba.get_num_threads()


# numpy reference path ------------------------------------------------------

def conv2d_forward_np(x, w, b):
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B,C,H,W,k,k
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B,H,W,O
    out = out.transpose(0, 3, 1, 2) + b.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out, dtype=x.dtype)


def conv2d_backward_np(x, w, dout):
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # O,C,k,k
    db = dout.sum(axis=(0, 2, 3))
    q = k - 1 - p
    dp = np.pad(dout, ((0, 0), (0, 0), (q, q), (q, q)))
    dwin = sliding_window_view(dp, (k, k), axis=(2, 3))  # B,O,H,W,k,k
    dx = np.tensordot(dwin, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
    dx = dx.transpose(0, 3, 1, 2)
    return (np.ascontiguousarray(dx, dtype=x.dtype),
            dw.astype(x.dtype, copy=False), db.astype(x.dtype, copy=False))


def maxpool2_forward_np(x):
    bsz, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    win = x[:, :, :2 * h2, :2 * w2].reshape(bsz, c, h2, 2, w2, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, h2, w2, 4)
    idx = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward_np(dout, idx, in_shape):
    bsz, c, h, w = in_shape
    h2, w2 = dout.shape[2], dout.shape[3]
    onehot = (idx[..., None] == np.arange(4)).astype(dout.dtype) * dout[..., None]
    block = onehot.reshape(bsz, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    dx[:, :, :2 * h2, :2 * w2] = block.reshape(bsz, c, 2 * h2, 2 * w2)
    return dx


# numba path ----------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _pad(x, p):
        bsz, c, h, w = x.shape
        out = np.zeros((bsz, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
        out[:, :, p:p + h, p:p + w] = x
        return out

    @njit(parallel=True, cache=True)
    def _conv_fwd(x, w, b, out):
        bsz, c_in, h, wd = x.shape
        c_out, _, k, _ = w.shape
        xp = _pad(x, k // 2)
        for n in prange(bsz * c_out):
            bi = n // c_out
            o = n % c_out
            acc = out[bi, o]
            acc[:, :] = b[o]
            for c in range(c_in):
                for di in range(k):
                    for dj in range(k):
                        wv = w[o, c, di, dj]
                        for i in range(h):
                            for j in range(wd):
                                acc[i, j] += wv * xp[bi, c, i + di, j + dj]

    @njit(parallel=True, cache=True)
    def _conv_bwd_input(w, dout, dx):
        # correlation of the padded upstream gradient with the flipped kernel
        bsz, c_in, h, wd = dx.shape
        c_out, _, k, _ = w.shape
        dp = _pad(dout, k - 1 - k // 2)
        for n in prange(bsz * c_in):
            bi = n // c_in
            c = n % c_in
            acc = dx[bi, c]
            acc[:, :] = 0
            for o in range(c_out):
                for di in range(k):
                    for dj in range(k):
                        wv = w[o, c, k - 1 - di, k - 1 - dj]
                        for i in range(h):
                            for j in range(wd):
                                acc[i, j] += wv * dp[bi, o, i + di, j + dj]

    # fastmath lets LLVM reassociate the long reductions into SIMD lanes;
    # the summation order is still fixed per build, so results stay reproducible.
    @njit(parallel=True, cache=True, fastmath=True)
    def _conv_bwd_weight(x, dout, dw, db):
        bsz, c_in, h, wd = x.shape
        c_out, _, k, _ = dw.shape
        xp = _pad(x, k // 2)
        for n in prange(c_out * c_in):
            o = n // c_in
            c = n % c_in
            for di in range(k):
                for dj in range(k):
                    acc = dw.dtype.type(0)
                    for bi in range(bsz):
                        for i in range(h):
                            for j in range(wd):
                                acc += dout[bi, o, i, j] * xp[bi, c, i + di, j + dj]
                    dw[o, c, di, dj] = acc
        for o in range(c_out):
            acc = db.dtype.type(0)
            for bi in range(bsz):
                for i in range(h):
                    for j in range(wd):
                        acc += dout[bi, o, i, j]
            db[o] = acc

    @njit(cache=True)
    def _pool_fwd(x, out, idx):
        bsz, c, h2, w2 = out.shape
        for bi in range(bsz):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        best = x[bi, ch, 2 * i, 2 * j]
                        arg = 0
                        for t in range(1, 4):
                            v = x[bi, ch, 2 * i + t // 2, 2 * j + t % 2]
                            if v > best:
                                best = v
                                arg = t
                        out[bi, ch, i, j] = best
                        idx[bi, ch, i, j] = arg

    @njit(cache=True)
    def _pool_bwd(dout, idx, dx):
        bsz, c, h2, w2 = dout.shape
        for bi in range(bsz):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        t = idx[bi, ch, i, j]
                        dx[bi, ch, 2 * i + t // 2, 2 * j + t % 2] = dout[bi, ch, i, j]


def conv2d_forward_nb(x, w, b):
    out = np.empty((x.shape[0], w.shape[0], x.shape[2], x.shape[3]), dtype=x.dtype)
    _conv_fwd(np.ascontiguousarray(x), np.ascontiguousarray(w, dtype=x.dtype),
              np.ascontiguousarray(b, dtype=x.dtype), out)
    return out


def conv2d_backward_nb(x, w, dout):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    dout = np.ascontiguousarray(dout, dtype=x.dtype)
    dx = np.empty_like(x)
    dw = np.empty_like(w)
    db = np.empty(w.shape[0], dtype=x.dtype)
    _conv_bwd_input(w, dout, dx)
    _conv_bwd_weight(x, dout, dw, db)
    return dx, dw, db


def maxpool2_forward_nb(x):
    bsz, c, h, w = x.shape
    out = np.empty((bsz, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty(out.shape, dtype=np.int8)
    _pool_fwd(np.ascontiguousarray(x), out, idx)
    return out, idx


def maxpool2_backward_nb(dout, idx, in_shape):
    dx = np.zeros(in_shape, dtype=dout.dtype)
    _pool_bwd(np.ascontiguousarray(dout), idx, dx)
    return dx


IMPLEMENTATIONS = {
    "numpy": (conv2d_forward_np, conv2d_backward_np, maxpool2_forward_np, maxpool2_backward_np),
}
if HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = (conv2d_forward_nb, conv2d_backward_nb,
                                maxpool2_forward_nb, maxpool2_backward_nb)

BACKEND = "numba" if USE_NUMBA else "numpy"
conv2d_forward, conv2d_backward, maxpool2_forward, maxpool2_backward = IMPLEMENTATIONS[BACKEND]
