"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary and when this file is run directly.
"""
import time

import numpy as np
import pytest

from mcfbc import metrics
from mcfbc.ablation import load_desk_data, run_ablation, ablation_config
from mcfbc.colorspace import ImageTensor, dequantize, quantize, rgb_to_ycbcr, ycbcr_to_rgb
from mcfbc.gradcheck import audit_model, grad_check
from mcfbc.loss import FocalParams, cross_entropy, focal_loss
from mcfbc.oracles import bilinear_oracle, bridge_oracle, lasso_oracle
from mcfbc.train import lr_schedule, TrainConfig, train, save_state, load_model

RESULTS = []


def record(name, ok, detail):
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    return load_desk_data(tmp_path_factory.mktemp("desk"), seed=0, n_per_class=200, size=32)


def test_c1_oracle_suite():
    t0 = time.perf_counter()
    a = lasso_oracle(n=1000)
    b = bridge_oracle(n=100)
    c = bilinear_oracle(n=100)
    dt = time.perf_counter() - t0
    ok = a[0] <= 1e-8 and b[0] <= 1e-10 and c[0] <= 1e-12 and dt < 10
    record("1 oracle suite", ok,
           f"lasso {a[0]:.1e}<=1e-8, bridge {b[0]:.1e}<=1e-10, bilinear {c[0]:.1e}<=1e-12, {dt:.2f}s<10s")


def test_c2_gradient_audit():
    t0 = time.perf_counter()
    worst, skipped, near = 0.0, [], []
    for seed in range(5):
        model, sample = audit_model(seed, "small")
        assert model.params["fbc.U"].shape == (8, 16)
        assert sample[0].shape[-1] >> 3 == 3  # 3x3 grid, N = 9
        res = grad_check(model, sample, h=1e-5, tol=1e-4, focal=FocalParams(1.0, 1.0))
        worst = max(worst, res["max_rel_err"])
        skipped.append(res["skipped_kinks"])
        near.append(res["near_threshold_codes"])
    dt = time.perf_counter() - t0
    record("2 gradient audit", worst <= 1e-4 and dt < 60,
           f"max rel err {worst:.2e}<=1e-4 over 5 seeds, kinks skipped {skipped}, "
           f"codes near threshold {near}, {dt:.1f}s<60s")


def test_c3_schedule():
    got = [lr_schedule(e) for e in (0, 40, 80, 200)]
    record("3 lr schedule", got == [0.01, 0.001, 1e-4, 1e-4], f"epochs 0/40/80/200 -> {got}")


def test_c4_focal_loss():
    rng = np.random.default_rng(0)
    p = rng.uniform(1e-9, 1 - 1e-9, 1000)
    probs = np.stack([1 - p, p], axis=1)
    labels = rng.integers(0, 2, 1000)
    pt = probs[np.arange(1000), labels]
    ce = cross_entropy(probs, labels)
    e0 = np.max(np.abs(focal_loss(probs, labels, FocalParams(1.0, 0.0)) - ce))
    e1 = np.max(np.abs(focal_loss(probs, labels, FocalParams(1.0, 1.0)) / ce - (1 - pt)))
    record("4 focal loss", e0 <= 1e-12 and e1 <= 1e-12,
           f"|FL(g=0)-CE| {e0:.1e}, |FL(g=1)/CE-(1-pt)| {e1:.1e} (<=1e-12)")


def test_c5_metrics():
    rates = metrics.apcer_bpcer_acer([0.6, 0.2, 0.7, 0.4], [0, 0, 1, 1], 0.5)
    e, _ = metrics.eer([0.9, 0.8, 0.3, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0, 0])
    rng = np.random.default_rng(1)
    identity = True
    for _ in range(200):
        n = int(rng.integers(2, 40))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        for t in (float(rng.random()), "eer"):
            rep = metrics.report(rng.random(n), y, threshold=t)
            identity &= rep["acer"] == (rep["apcer"] + rep["bpcer"]) / 2
    ok = rates == (0.5, 0.5, 0.5) and abs(e - 1 / 3) <= 1e-9 and identity
    record("5 metrics", ok, f"worked example {rates}, EER {e:.12f} vs 1/3, ACER identity {identity}")


def test_c6_desk_ablation(desk):
    runs, means = run_ablation(desk, seeds=range(5))
    slowest = max(r["seconds"] for r in runs)
    ok = (means["dual"] >= means["rgb"]
          and min(means["dual"], means["rgb"]) >= means["concat"] - 0.02
          and slowest < 600)
    record("6 desk ablation", ok,
           f"mean test acc dual {means['dual']:.4f} >= rgb {means['rgb']:.4f}, "
           f"both >= concat {means['concat']:.4f} - 0.02; slowest run {slowest:.0f}s<600s")


def test_c7_determinism(desk, tmp_path):
    tr, va, te = desk
    cfg = ablation_config("dual", seed=3, epochs=2)
    a = train(cfg, tr, va)
    b = train(cfg, tr, va)
    same_log = repr(a.history) == repr(b.history)
    save_state(a, tmp_path / "m.fbc")
    xa, xb = te.streams(cfg.color_spaces)
    before = a.selected_model().scores(xa, xb)
    after = load_model(tmp_path / "m.fbc").scores(xa, xb)
    same_scores = before.tobytes() == after.tobytes()
    record("7 determinism", same_log and same_scores,
           f"identical logs {same_log}, checkpoint scores bitwise {same_scores}")


def test_c8_color_fidelity():
    g = np.linspace(0, 1, 17)
    cube = np.stack(np.meshgrid(g, g, g, indexing="ij")).reshape(3, 17, 289)
    img = ImageTensor(cube, "RGB")
    ycc = rgb_to_ycbcr(img, clamp=False)
    pre = np.max(np.abs(ycbcr_to_rgb(ycc, clamp=False).data - cube))
    q = ImageTensor(dequantize(quantize(rgb_to_ycbcr(img).data)), "YCbCr")
    post = np.max(np.abs(ycbcr_to_rgb(q).data - cube))
    record("8 color fidelity", pre <= 1e-6 and post <= 2 / 255,
           f"17^3 lattice round trip {pre:.1e}<=1e-6, through 8-bit {post * 255:.3f}/255<=2/255")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
