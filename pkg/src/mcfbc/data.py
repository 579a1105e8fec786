"""Dataset manifests, subject-disjoint splitting and a synthetic two-class generator."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .colorspace import ImageTensor, read_image, write_image, ycbcr_to_rgb, convert_batch
from .errors import ManifestError

log = logging.getLogger(__name__)

LABELS = {"attack": 0, "bonafide": 1}
LABEL_NAMES = {v: k for k, v in LABELS.items()}
SPLITS = ("train", "valid", "test")
MANIFEST_HEADER = ["path", "label", "split", "group"]


@dataclass
class ManifestEntry:
    path: str
    label: str
    split: str = ""
    group: str = ""


@dataclass
class DatasetManifest:
    root: Path
    entries: list = field(default_factory=list)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def counts(self):
        return {s: len(self.split(s)) for s in SPLITS}


def _check_groups(entries):
    seen = {}
    for e in entries:
        prev = seen.setdefault(e.group, e.split)
        if prev != e.split:
            raise ManifestError(f"group {e.group!r} appears in both {prev} and {e.split}")


def load_manifest(path, check_files=True, require_split=True) -> DatasetManifest:
    """Parse and validate a ``path,label,split,group`` manifest.

    ``require_split=False`` accepts an empty split column, for manifests
    that have not been through ``make_splits`` yet.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_HEADER:
            raise ManifestError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            e = ManifestEntry(row["path"].strip(), row["label"].strip(),
                              row["split"].strip(), row["group"].strip())
            if e.label not in LABELS:
                raise ManifestError(f"line {lineno}: unknown label {e.label!r}")
            if e.split not in SPLITS and (require_split or e.split):
                raise ManifestError(f"line {lineno}: unknown split {e.split!r}")
            if not e.group:
                raise ManifestError(f"line {lineno}: empty group id")
            entries.append(e)
    _check_groups([e for e in entries if e.split])
    root = path.parent
    if check_files:
        missing = [e.path for e in entries if not (root / e.path).is_file()]
        if missing:
            raise ManifestError(f"{len(missing)} listed files are missing, e.g. {missing[0]}")
    return DatasetManifest(root, entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            w.writerow([e.path, e.label, e.split, e.group])


def _group_key(seed, group):
    digest = hashlib.sha256(f"{seed}:{group}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def apportion(n, ratio):
    """Largest-remainder integer split of ``n`` items by ``ratio``; ties favour earlier parts."""
    total = sum(ratio)
    quotas = [n * r / total for r in ratio]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(ratio)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    return counts


def make_splits(entries, ratio=(3, 1, 1), seed=0, mode="exact"):
    """Assign train/valid/test by group, stratified by each group's label.

    ``exact`` orders groups by a seeded hash and cuts them by largest-remainder
    counts. ``stable`` places each group by its own hash value alone, so
    adding groups never moves existing ones, at the cost of inexact ratios.
    """
    groups = {}
    for e in entries:
        groups.setdefault(e.group, []).append(e)
    if len(groups) < 5:
        raise ManifestError(f"need at least 5 groups to split, got {len(groups)}")
    if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise ManifestError(f"bad split ratio {ratio}")

    assignment = {}
    if mode == "stable":
        total = sum(ratio)
        cuts = np.cumsum(ratio) / total
        for g in groups:
            u = _group_key(seed, g) / 2.0 ** 64
            assignment[g] = SPLITS[int(np.searchsorted(cuts, u, side="right"))]
    elif mode == "exact":
        strata = {}
        for g, members in groups.items():
            strata.setdefault(sorted(m.label for m in members)[0], []).append(g)
        for label in sorted(strata):
            ordered = sorted(strata[label], key=lambda g: (_group_key(seed, g), g))
            n_train, n_valid, _ = apportion(len(ordered), ratio)
            for i, g in enumerate(ordered):
                assignment[g] = "train" if i < n_train else "valid" if i < n_train + n_valid else "test"
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return [replace(e, split=assignment[e.group]) for e in entries]


def kfold(groups, k, seed=0):
    """Group-disjoint folds: list of ``(train_groups, held_out_groups)``."""
    ordered = sorted(set(groups), key=lambda g: (_group_key(seed, g), g))
    if k < 2 or k > len(ordered):
        raise ValueError(f"cannot make {k} folds from {len(ordered)} groups")
    folds = [ordered[i::k] for i in range(k)]
    return [([g for j, f in enumerate(folds) if j != i for g in f], folds[i]) for i in range(k)]


@dataclass
class ImageSet:
    images: np.ndarray  # (n, 3, H, W) RGB in [0, 1]
    labels: np.ndarray  # 0 attack, 1 bonafide
    ids: list

    def __len__(self):
        return len(self.labels)

    def streams(self, spaces):
        return tuple(convert_batch(self.images, s) for s in spaces)


def load_split(manifest: DatasetManifest, split, dtype=np.float32) -> ImageSet:
    entries = manifest.split(split)
    if not entries:
        raise ManifestError(f"split {split!r} is empty")
    imgs = []
    for e in entries:
        try:
            imgs.append(read_image(manifest.root / e.path, dtype).data)
        except (OSError, ValueError) as exc:
            raise ManifestError(f"cannot decode {e.path}: {exc}") from exc
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise ManifestError(f"images in split {split!r} have mixed shapes {sorted(shapes)}")
    labels = np.array([LABELS[e.label] for e in entries], dtype=np.int64)
    return ImageSet(np.stack(imgs).astype(dtype), labels, [e.path for e in entries])


# synthetic data ------------------------------------------------------------

@dataclass
class SynthParams:
    chroma_center: tuple = (0.44, 0.58)  # (Cb, Cr) of the bona fide class
    delta: float = 0.03                  # distance between class chroma means
    direction: tuple = (0.6, -0.8)       # unit vector of the attack shift in (Cb, Cr)
    chroma_spread: float = 0.02          # per-image std of the chroma mean
    luma_range: tuple = (0.35, 0.65)
    noise_std: float = 0.06
    chroma_noise_std: float = 0.015
    blur_radius: int = 2                 # box blur applied to attack texture


def _box_blur(a, radius):
    """Separable box blur with reflect padding on the last two axes."""
    if radius <= 0:
        return a
    width = 2 * radius + 1
    out = a
    for axis in (-2, -1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        c = np.cumsum(padded, axis=axis)
        c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), c], axis=axis)
        n = out.shape[axis]
        out = (np.take(c, np.arange(width, width + n), axis=axis)
               - np.take(c, np.arange(0, n), axis=axis)) / width
    return out


def synth_images(rng, n_per_class, size, params: SynthParams = SynthParams()):
    """Return ``(rgb, ycbcr, labels)`` float arrays before quantization."""
    center = np.asarray(params.chroma_center, dtype=float)
    direction = np.asarray(params.direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    ycc, labels = [], []
    for label in (LABELS["bonafide"], LABELS["attack"]):
        offsets = rng.standard_normal((n_per_class, 2)) * params.chroma_spread
        offsets -= offsets.mean(axis=0)  # realize the class mean exactly
        mean = center + (direction * params.delta if label == LABELS["attack"] else 0.0)
        for i in range(n_per_class):
            luma = rng.uniform(*params.luma_range)
            noise = rng.standard_normal((3, size, size))
            if label == LABELS["attack"]:
                noise = _box_blur(noise, params.blur_radius)
                noise /= noise.std(axis=(1, 2), keepdims=True)
            noise -= noise.mean(axis=(1, 2), keepdims=True)
            img = np.empty((3, size, size))
            img[0] = luma + params.noise_std * noise[0]
            img[1] = mean[0] + offsets[i, 0] + params.chroma_noise_std * noise[1]
            img[2] = mean[1] + offsets[i, 1] + params.chroma_noise_std * noise[2]
            ycc.append(img)
            labels.append(label)
    ycc = np.stack(ycc)
    rgb = np.stack([ycbcr_to_rgb(ImageTensor(np.clip(im, 0, 1), "YCbCr")).data for im in ycc])
    return rgb, ycc, np.array(labels)


def generate_synthetic(out_dir, seed=0, n_per_class=200, size=32, params: SynthParams | None = None,
                       ratio=(3, 1, 1), fmt="png") -> Path:
    """Write ``out_dir/<label>/<file>`` images plus ``manifest.csv`` and ``synth.json``.

    Every image is its own group, so the 3:1:1 split is per image and
    stratified by class.
    """
    if size < 16:
        raise ValueError("synthetic images need size >= 16")
    params = params or SynthParams()
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    rgb, _, labels = synth_images(rng, n_per_class, size, params)
    entries = []
    counters = {0: 0, 1: 0}
    for img, label in zip(rgb, labels):
        name = LABEL_NAMES[int(label)]
        idx = counters[int(label)]
        counters[int(label)] += 1
        rel = f"{name}/{name}_{idx:05d}.{fmt}"
        (out_dir / name).mkdir(parents=True, exist_ok=True)
        write_image(img, out_dir / rel)
        entries.append(ManifestEntry(rel, name, "", f"{name}_{idx:05d}"))
    entries = make_splits(entries, ratio, seed)
    manifest = DatasetManifest(out_dir, entries)
    path = out_dir / "manifest.csv"
    write_manifest(manifest, path)
    meta = {"seed": seed, "n_per_class": n_per_class, "size": size, "ratio": list(ratio),
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in vars(params).items()}}
    (out_dir / "synth.json").write_text(json.dumps(meta, indent=2))
    log.info("synthetic dataset: %s", meta)
    return path
