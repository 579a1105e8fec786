"""Presentation attack detection error rates (ISO/IEC 30107-3 style).

Scores are bona fide probabilities; a sample is accepted as bona fide
when ``score >= threshold``.

- APCER: fraction of attacks accepted as bona fide
- BPCER: fraction of bona fide presentations rejected
- ACER: their mean
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import MissingClass

BONAFIDE = 1
ATTACK = 0
_NAMES = {"bonafide": BONAFIDE, "attack": ATTACK}


@dataclass
class Confusion:
    attack_accepted: int
    attack_rejected: int
    bonafide_accepted: int
    bonafide_rejected: int


@dataclass
class MetricsReport:
    accuracy: float
    apcer: float
    bpcer: float
    acer: float
    eer: float
    eer_threshold: float
    threshold: float
    threshold_provenance: str
    n_bonafide: int
    n_attack: int

    def to_dict(self):
        return asdict(self)


def _arrays(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if y.dtype.kind in "US":
        y = np.array([_NAMES[v] for v in y])
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y.astype(int)


def classify(scores, labels, threshold) -> Confusion:
    s, y = _arrays(scores, labels)
    t = min(max(float(threshold), 0.0), 1.0)
    accept = s >= t
    att = y == ATTACK
    return Confusion(int((accept & att).sum()), int((~accept & att).sum()),
                     int((accept & ~att).sum()), int((~accept & ~att).sum()))


def _require_both(c: Confusion):
    if c.attack_accepted + c.attack_rejected == 0:
        raise MissingClass("no attack samples")
    if c.bonafide_accepted + c.bonafide_rejected == 0:
        raise MissingClass("no bona fide samples")


def apcer_bpcer_acer(scores, labels, threshold):
    c = classify(scores, labels, threshold)
    _require_both(c)
    apcer = c.attack_accepted / (c.attack_accepted + c.attack_rejected)
    bpcer = c.bonafide_rejected / (c.bonafide_accepted + c.bonafide_rejected)
    return apcer, bpcer, (apcer + bpcer) / 2


def eer(scores, labels):
    """Equal error rate and its threshold.

    Every distinct score is tried as a threshold, plus one above the
    maximum where everything is rejected. Where APCER - BPCER changes sign
    between neighbouring thresholds both rates are linearly interpolated to
    the crossing. If the two rates are equal over a run of thresholds the
    midpoint of that run is returned.
    """
    s, y = _arrays(scores, labels)
    att = np.sort(s[y == ATTACK])
    bf = np.sort(s[y == BONAFIDE])
    if len(att) == 0 or len(bf) == 0:
        raise MissingClass("EER needs both classes")
    ts = np.unique(s)
    apcer = 1.0 - np.searchsorted(att, ts, side="left") / len(att)
    bpcer = np.searchsorted(bf, ts, side="left") / len(bf)
    top = np.nextafter(ts[-1], np.inf) if ts[-1] < 1.0 else 1.0 + 1e-12
    ts = np.append(ts, top)
    apcer = np.append(apcer, 0.0)
    bpcer = np.append(bpcer, 1.0)
    diff = apcer - bpcer

    zero = np.flatnonzero(diff == 0)
    if len(zero):
        run_end = zero[0]
        while run_end + 1 < len(diff) and diff[run_end + 1] == 0:
            run_end += 1
        t = 0.5 * (ts[zero[0]] + ts[run_end])
        return float(apcer[zero[0]]), float(min(t, 1.0))
    i = int(np.flatnonzero(diff > 0)[-1])
    d1, d2 = diff[i], diff[i + 1]
    frac = d1 / (d1 - d2)
    rate = apcer[i] + frac * (apcer[i + 1] - apcer[i])
    t = ts[i] + frac * (ts[i + 1] - ts[i])
    return float(rate), float(min(t, 1.0))


def aggregate_video(frame_scores):
    frame_scores = np.asarray(frame_scores, dtype=float)
    if frame_scores.size == 0:
        raise ValueError("no frame scores")
    return float(frame_scores.mean())


def report(scores, labels, threshold=0.5, provenance=None) -> dict:
    """All metrics as a plain dict. ``threshold="eer"`` uses the EER threshold."""
    s, y = _arrays(scores, labels)
    e, et = eer(s, y)
    if threshold == "eer":
        threshold, provenance = et, provenance or "eer-derived"
    provenance = provenance or "fixed"
    apcer, bpcer, acer = apcer_bpcer_acer(s, y, threshold)
    c = classify(s, y, threshold)
    acc = (c.attack_rejected + c.bonafide_accepted) / len(s)
    return MetricsReport(acc, apcer, bpcer, acer, e, et, float(threshold), provenance,
                         int((y == BONAFIDE).sum()), int((y == ATTACK).sum())).to_dict()


def write_scores(path, ids, labels, scores) -> None:
    names = {BONAFIDE: "bonafide", ATTACK: "attack"}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "score"])
        for i, l, s in zip(ids, labels, scores):
            w.writerow([i, names[int(l)], repr(float(s))])


def read_scores(path):
    """Return ``(ids, labels, scores)`` from an ``id,label,score`` CSV."""
    ids, labels, scores = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "label", "score"]:
            raise ValueError("score file header must be id,label,score")
        for row in reader:
            if row["label"] not in _NAMES:
                raise ValueError(f"unknown label {row['label']!r}")
            ids.append(row["id"])
            labels.append(_NAMES[row["label"]])
            s = float(row["score"])
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"score {s} outside [0, 1]")
            scores.append(s)
    return ids, np.array(labels, dtype=int), np.array(scores)


def write_report(path, rep: dict) -> None:
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
