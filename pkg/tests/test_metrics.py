import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcfbc import metrics
from mcfbc.errors import MissingClass


def test_worked_example():
    scores = [0.6, 0.2, 0.7, 0.4]
    labels = [0, 0, 1, 1]
    assert metrics.apcer_bpcer_acer(scores, labels, 0.5) == (0.5, 0.5, 0.5)


def test_all_correct():
    assert metrics.apcer_bpcer_acer([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1], 0.5) == (0, 0, 0)


def test_classify_edges():
    scores = [0.0, 0.3, 0.5, 0.5, 0.9, 1.0]
    labels = [0, 1, 0, 1, 0, 1]
    c = metrics.classify(scores, labels, 0.0)
    assert c.attack_rejected == 0 and c.bonafide_rejected == 0
    c = metrics.classify(scores, labels, 1.5)  # clamped to 1
    assert c.bonafide_accepted == 1 and c.attack_accepted == 0
    c = metrics.classify(scores, labels, 0.5)  # equality counts as bona fide
    assert (c.attack_accepted, c.attack_rejected, c.bonafide_accepted, c.bonafide_rejected) == (2, 1, 2, 1)


def test_random_set_against_hand_count():
    rng = np.random.default_rng(0)
    s = rng.random(10)
    y = np.r_[np.zeros(5, int), np.ones(5, int)]
    apcer = sum(1 for v, l in zip(s, y) if l == 0 and v >= 0.5) / 5
    bpcer = sum(1 for v, l in zip(s, y) if l == 1 and v < 0.5) / 5
    assert metrics.apcer_bpcer_acer(s, y, 0.5) == (apcer, bpcer, (apcer + bpcer) / 2)


def test_eer_examples():
    rate, _ = metrics.eer([0.9, 0.8, 0.3, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0, 0])
    assert abs(rate - 1 / 3) <= 1e-9
    assert metrics.eer([0.8, 0.9, 0.1, 0.2], [1, 1, 0, 0])[0] == 0.0
    s = np.tile(np.linspace(0.1, 0.9, 9), 2)
    assert metrics.eer(s, np.r_[np.zeros(9, int), np.ones(9, int)])[0] == pytest.approx(0.5)


def test_eer_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    s = rng.random(40)
    y = rng.integers(0, 2, 40)
    y[:2] = [0, 1]
    a, _ = metrics.eer(s, y)
    b, _ = metrics.eer(s ** 3 / 2, y)
    assert a == pytest.approx(b, abs=1e-12)


def test_rates_monotone_in_threshold():
    rng = np.random.default_rng(2)
    s, y = rng.random(30), np.r_[np.zeros(15, int), np.ones(15, int)]
    rows = [metrics.apcer_bpcer_acer(s, y, t) for t in np.linspace(0, 1, 41)]
    ap = [r[0] for r in rows]
    bp = [r[1] for r in rows]
    assert all(a >= b for a, b in zip(ap, ap[1:]))
    assert all(a <= b for a, b in zip(bp, bp[1:]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.floats(0, 1), st.data())
def test_report_acer_identity(scores, t, data):
    labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
    labels[0], labels[1] = 0, 1
    rep = metrics.report(scores, labels, threshold=t)
    assert rep["acer"] == (rep["apcer"] + rep["bpcer"]) / 2
    rep = metrics.report(scores, labels, threshold="eer")
    assert rep["acer"] == (rep["apcer"] + rep["bpcer"]) / 2
    assert rep["threshold_provenance"] == "eer-derived"


def test_missing_class():
    with pytest.raises(MissingClass):
        metrics.apcer_bpcer_acer([0.2, 0.3], [1, 1], 0.5)
    with pytest.raises(MissingClass):
        metrics.eer([0.2, 0.3], [0, 0])


def test_video_aggregation():
    assert metrics.aggregate_video([0.3]) == 0.3
    assert metrics.aggregate_video([0.2, 0.8]) == pytest.approx(0.5)
    f = np.random.default_rng(3).random(10)
    assert metrics.aggregate_video(f) == pytest.approx(sum(f) / 10)


def test_score_file_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    s, y = rng.random(12).astype(np.float32), np.r_[np.zeros(6, int), np.ones(6, int)]
    ids = [f"img{i}" for i in range(12)]
    metrics.write_scores(tmp_path / "s.csv", ids, y, s)
    ids2, y2, s2 = metrics.read_scores(tmp_path / "s.csv")
    assert ids2 == ids and np.array_equal(y2, y)
    assert metrics.report(s2, y2) == metrics.report(s, y)
    metrics.write_report(tmp_path / "r.json", metrics.report(s, y))
    import json
    assert json.loads((tmp_path / "r.json").read_text())["n_attack"] == 6


def test_bad_score_file(tmp_path):
    (tmp_path / "s.csv").write_text("id,label,score\na,fake,0.3\n")
    with pytest.raises(ValueError):
        metrics.read_scores(tmp_path / "s.csv")
