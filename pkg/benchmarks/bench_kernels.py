"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json]

Also times one full training step (forward + backward, batch 16, 32x32,
dual-stream FBC) on each backend. Outputs of the two paths are compared
before timing.
"""
import argparse
import json
import time

import numpy as np

from mcfbc import kernels
from mcfbc.loss import FocalParams
from mcfbc.model import Model, ModelConfig


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    x = rng.standard_normal((16, 8, 32, 32)).astype(np.float32)
    w = rng.standard_normal((16, 8, 3, 3)).astype(np.float32)
    b = rng.standard_normal(16).astype(np.float32)
    y = kernels.conv2d_forward_np(x, w, b)
    dout = rng.standard_normal(y.shape).astype(np.float32)
    pooled, idx = kernels.maxpool2_forward_np(y)
    dp = rng.standard_normal(pooled.shape).astype(np.float32)
    return {
        "conv_forward": lambda impl: impl[0](x, w, b),
        "conv_backward": lambda impl: impl[1](x, w, dout),
        "pool_forward": lambda impl: impl[2](y),
        "pool_backward": lambda impl: impl[3](dp, idx, y.shape),
    }


def _flatten(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o).astype(np.float64) for o in out])
    return np.ravel(out).astype(np.float64)


def train_step(backend, rng):
    model = Model.init(ModelConfig(["RGB", "YCbCr"], "fbc"), np.random.default_rng(0))
    xa = rng.random((16, 3, 32, 32)).astype(np.float32)
    xb = rng.random((16, 3, 32, 32)).astype(np.float32)
    labels = np.arange(16) % 2

    def step():
        saved = kernels.BACKEND
        kernels.BACKEND = backend
        try:
            model.loss_and_grads(xa, xb, labels, FocalParams())
        finally:
            kernels.BACKEND = saved
    return step


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()
    kernels.set_threads()
    rng = np.random.default_rng(0)
    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    rows = []
    for name, case in kernel_cases(rng).items():
        outs = {bk: _flatten(case(kernels.IMPLEMENTATIONS[bk])) for bk in backends}
        ref = outs["numpy"]
        diff = float(np.max(np.abs(ref - outs[backends[-1]])) / max(np.max(np.abs(ref)), 1e-30))
        row = {"case": name, "max_rel_diff": diff}
        for bk in backends:
            row[bk + "_ms"] = 1e3 * best_of(lambda: case(kernels.IMPLEMENTATIONS[bk]), args.repeat)
        rows.append(row)
    row = {"case": "train_step", "max_rel_diff": None}
    for bk in backends:
        row[bk + "_ms"] = 1e3 * best_of(train_step(bk, rng), max(3, args.repeat // 4))
    rows.append(row)

    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'case':15s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'rel diff':>10s}")
    for r in rows:
        nb = r.get("numba_ms")
        speed = f"{r['numpy_ms'] / nb:7.1f}x" if nb else "      -"
        diff = "" if r["max_rel_diff"] is None else f"{r['max_rel_diff']:.2e}"
        nbs = f"{nb:10.2f}" if nb else "         -"
        print(f"{r['case']:15s} {r['numpy_ms']:10.2f} {nbs} {speed:>8s} {diff:>10s}")


if __name__ == "__main__":
    main()
