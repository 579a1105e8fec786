"""Independent oracles for the closed-form pieces.

Each oracle recomputes a quantity the slow, obvious way and reports the
largest disagreement with the library implementation.
"""
from __future__ import annotations

import time

import numpy as np

from .fbc import FbcParams, RawDictionary, bilinear_pool, derive_transforms, fbc_encode
from .metrics import eer


def scalar_lasso_bruteforce(c_pre, lam, points=201, rounds=12):
    """argmin_c (c_pre - c)^2 + lam |c| by repeated grid zoom, vectorized over instances.

    The objective is compared as a difference from the current centre ``m``,
    ``d (d - 2 (c_pre - m)) + lam (|m + d| - |m|)``, which keeps its
    resolution near the flat minimum where absolute values would round.
    ``|m + d| - |m|`` is taken as ``sign(m) d`` when no sign change occurs.
    """
    c_pre = np.asarray(c_pre, dtype=float)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), c_pre.shape)
    m = np.zeros_like(c_pre)
    half = np.abs(c_pre) + 1.0
    t = np.linspace(-1.0, 1.0, points)
    for _ in range(rounds):
        d = half[:, None] * t[None, :]
        mm = m[:, None]
        same_side = (mm + d) * mm > 0
        dabs = np.where(same_side, np.sign(mm) * d, np.abs(mm + d) - np.abs(mm))
        df = d * (d - 2 * (c_pre[:, None] - mm)) + lam[:, None] * dabs
        m = m + d[np.arange(len(c_pre)), df.argmin(axis=1)]
        half = half * 4 / (points - 1)
    return m


def lasso_oracle(n=1000, seed=0, tol=1e-8):
    """fbc_encode on scalar pairs (p = q = k = r = 1) against the brute-force minimizer."""
    rng = np.random.default_rng(seed)
    u, v, x, y = rng.uniform(-1.5, 1.5, (4, n))
    lam = rng.uniform(0.0, 1.0, n)
    got = np.empty(n)
    for i in range(n):
        params = FbcParams(np.array([[u[i]]]), np.array([[v[i]]]), lam=lam[i], k=1, r=1)
        got[i] = fbc_encode(np.array([x[i]]), np.array([y[i]]), params)[0]
    want = scalar_lasso_bruteforce(x * u * y * v, lam)
    return float(np.max(np.abs(got - want))), tol, n


def _nonzero(rng, n):
    return rng.uniform(0.1, 2.0, n) * rng.choice([-1.0, 1.0], n)


def bridge_oracle(n=100, seed=1, tol=1e-10):
    """A single scalar atom u v: the derived transforms must give c = x y / (u v)."""
    rng = np.random.default_rng(seed)
    u, v, x, y = (_nonzero(rng, n) for _ in range(4))
    worst = 0.0
    for i in range(n):
        raw = RawDictionary(np.array([[u[i]]]), np.array([[v[i]]]), 1, 1)
        ut, vt = derive_transforms(raw, ridge=0.0)
        c = fbc_encode(np.array([x[i]]), np.array([y[i]]), FbcParams(ut, vt, lam=0.0, k=1, r=1))[0]
        want = x[i] * y[i] / (u[i] * v[i])
        worst = max(worst, abs(c - want) / abs(want))
    return worst, tol, n


def naive_bilinear(x, y):
    n, p = x.shape
    q = y.shape[1]
    out = np.zeros((p, q))
    for i in range(p):
        for j in range(q):
            s = 0.0
            for v in range(n):
                s += x[v, i] * y[v, j]
            out[i, j] = s
    return out


def bilinear_oracle(n=100, seed=2, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        p, q = rng.integers(1, 9, 2)
        m = int(rng.integers(1, 17))
        x = rng.standard_normal((m, p))
        y = rng.standard_normal((m, q))
        worst = max(worst, float(np.max(np.abs(bilinear_pool(x, y) - naive_bilinear(x, y)))))
    return worst, tol, n


def _rates_at(t, att, bf):
    apcer = sum(1 for s in att if s >= t) / len(att)
    bpcer = sum(1 for s in bf if s < t) / len(bf)
    return apcer, bpcer


def eer_oracle(n=100, seed=3, tol=1e-9):
    """Worked case plus a bracket check on random score sets.

    The EER must fall between the two error rates at the last threshold
    where APCER > BPCER and at the first one where it no longer is.
    """
    rate, _ = eer([0.9, 0.8, 0.3, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0, 0])
    worst = abs(rate - 1 / 3)
    rng = np.random.default_rng(seed)
    for _ in range(n):
        na, nb = rng.integers(2, 20, 2)
        att = np.round(rng.beta(2, 4, na), 2)
        bf = np.round(rng.beta(4, 2, nb), 2)
        scores = np.concatenate([att, bf])
        labels = np.r_[np.zeros(na, int), np.ones(nb, int)]
        rate, _ = eer(scores, labels)
        ts = sorted(set(scores.tolist())) + [2.0]
        pairs = [_rates_at(t, att, bf) for t in ts]
        i = max(j for j, (a, b) in enumerate(pairs) if a >= b)
        lo_a, lo_b = pairs[i]
        hi_a, hi_b = pairs[min(i + 1, len(pairs) - 1)]
        lo, hi = min(lo_a, lo_b, hi_a, hi_b), max(lo_a, lo_b, hi_a, hi_b)
        worst = max(worst, max(lo - rate, rate - hi, 0.0))
    return worst, tol, n + 1


ORACLES = (
    ("scalar_lasso", lasso_oracle),
    ("bridge_scalar", bridge_oracle),
    ("bilinear_pool", bilinear_oracle),
    ("eer_sweep", eer_oracle),
)


def run_all():
    """Run every oracle in a fixed order; returns a list of result dicts."""
    results = []
    for name, fn in ORACLES:
        t0 = time.perf_counter()
        err, tol, n = fn()
        results.append({"name": name, "max_err": err, "tol": tol, "instances": n,
                        "passed": bool(err <= tol), "seconds": time.perf_counter() - t0})
    return results
