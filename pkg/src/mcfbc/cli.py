"""``mcfbc`` command line.

Exit codes: 0 ok, 1 check failed (gradcheck/oracle), 2 configuration
error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import kernels, metrics
from .colorspace import SPACES, ImageTensor, convert, read_image, write_image
from .data import (DatasetManifest, generate_synthetic, load_manifest, load_split, make_splits,
                   write_manifest)
from .errors import (ConfigError, InvalidColorSpace, ManifestError, MissingClass, NumericalError,
                     SingularSystem)
from .checkpoint import CheckpointError

log = logging.getLogger("mcfbc")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

# Keys a run config may carry besides the TrainConfig fields; flags override them.
RUN_KEYS = ("data", "out")


def _read_config(path):
    from .train import TrainConfig
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    run = {k: doc.pop(k) for k in RUN_KEYS if k in doc}
    return TrainConfig.from_dict(doc), run


def _manifest_path(p):
    p = Path(p)
    return p / "manifest.csv" if p.is_dir() else p


def _check_size(images, cfg):
    size = cfg.backbone.input_size
    if images.shape[-2:] != (size, size):
        raise ConfigError(f"backbone expects {size}x{size} inputs, data has "
                          f"{images.shape[-2]}x{images.shape[-1]}")


def cmd_train(args):
    from .train import init_state, save_state, train
    cfg, run = _read_config(args.config)
    data = args.data or run.get("data")
    out = args.out or run.get("out")
    if not data or not out:
        raise ConfigError("need --data and --out (or 'data'/'out' in the config)")
    manifest = load_manifest(_manifest_path(data))
    train_set = load_split(manifest, "train")
    valid_set = load_split(manifest, "valid") if manifest.split("valid") else None
    _check_size(train_set.images, cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    with open(out / "train_log.jsonl", "w") as fh:
        def on_epoch(entry):
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
        state = train(cfg, train_set, valid_set, state=init_state(cfg), on_epoch=on_epoch)
    save_state(state, out / "model.fbc")
    print(json.dumps({"checkpoint": str(out / "model.fbc"), "epochs": state.epoch,
                      "best_epoch": state.best_epoch, "best_valid_acer": state.best_acer}))
    return EXIT_OK


def cmd_eval(args):
    from .train import load_state
    try:
        state = load_state(args.ckpt)
    except (OSError, CheckpointError) as exc:
        raise ManifestError(f"cannot load checkpoint: {exc}") from exc
    model = state.selected_model() if args.which == "selected" else state.model
    manifest = load_manifest(_manifest_path(args.data))
    split = load_split(manifest, args.split, dtype=model.dtype)
    _check_size(split.images, state.cfg)
    xa, xb = split.streams(state.cfg.color_spaces)
    scores = model.scores(xa, xb)
    try:
        threshold = "eer" if args.threshold == "eer" else float(args.threshold)
    except ValueError:
        raise ConfigError(f"threshold must be a number or 'eer', got {args.threshold!r}") from None
    rep = metrics.report(scores, split.labels, threshold=threshold)
    rep["split"] = args.split
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_scores(out / "scores.csv", split.ids, split.labels, scores)
    metrics.write_report(out / "report.json", rep)
    print(json.dumps(rep, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import audit_model, grad_check
    model, sample = audit_model(args.seed, args.size)
    model.corrupt_backward = args.corrupt_backward
    res = grad_check(model, sample, h=args.h, tol=args.tol)
    if args.json:
        print(json.dumps(res, sort_keys=True))
    else:
        w = res["worst_coordinate"]
        print(f"checked {res['checked']} coordinates, skipped {res['skipped_kinks']} at kinks, "
              f"{res['near_threshold_codes']} codes near the threshold")
        for name, g in res["groups"].items():
            print(f"  {name:12s} {g['checked']:6d}  max rel err {g['max_rel_err']:.3e}")
        print(f"worst {w['coordinate']} rel err {w['rel_err']:.3e} (tol {res['tol']:g})")
        print("PASS" if res["passed"] else "FAIL")
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_oracle(args):
    from .oracles import run_all
    results = run_all()
    if args.json:
        print(json.dumps(results))
    else:
        for r in results:
            status = "PASS" if r["passed"] else "FAIL"
            print(f"{status}  {r['name']:14s} n={r['instances']:5d}  max err {r['max_err']:.3e}"
                  f"  tol {r['tol']:.0e}")
    return EXIT_OK if all(r["passed"] for r in results) else EXIT_FAIL


def cmd_color(args):
    if args.src not in SPACES or args.dst not in SPACES:
        raise InvalidColorSpace(f"spaces must be among {SPACES}")
    if args.src == args.dst:
        raise InvalidColorSpace("source and target space are the same")
    try:
        raw = read_image(args.input)
    except OSError as exc:
        raise ManifestError(f"cannot read {args.input}: {exc}") from exc
    out = convert(ImageTensor(raw.data, args.src), args.dst)
    write_image(out, args.output)
    return EXIT_OK


def cmd_synth(args):
    path = generate_synthetic(args.outdir, seed=args.seed, n_per_class=args.n, size=args.size,
                              fmt=args.format)
    m = load_manifest(path)
    print(json.dumps({"manifest": str(path), "counts": m.counts()}))
    return EXIT_OK


def _ratio(text):
    try:
        parts = tuple(float(p) for p in text.split(":"))
    except ValueError:
        raise ConfigError(f"bad ratio {text!r}") from None
    if len(parts) != 3:
        raise ConfigError("ratio needs three parts, e.g. 3:1:1")
    return parts


def cmd_split(args):
    m = load_manifest(args.manifest, require_split=False)
    entries = make_splits(m.entries, _ratio(args.ratio), args.seed, mode=args.mode)
    out = Path(args.out) if args.out else Path(args.manifest)
    write_manifest(DatasetManifest(m.root, entries), out)
    counts = {s: sum(e.split == s for e in entries) for s in ("train", "valid", "test")}
    print(json.dumps({"manifest": str(out), "counts": counts}))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="mcfbc", description="Multi-color-space FBC face anti-spoofing")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="manifest file or dataset directory")
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a split and write report.json and scores.csv")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", default="0.5", help="decision threshold or 'eer'")
    p.add_argument("--which", choices=["selected", "last"], default="selected")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", choices=["tiny", "small"], default="tiny")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt-backward", action="store_true", help="debug: scale dU by 1.1")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("oracle", help="run the oracle suite")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("color", help="convert an image between color spaces")
    p.add_argument("--from", dest="src", required=True)
    p.add_argument("--to", dest="dst", required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_color)

    p = sub.add_parser("synth", help="write the synthetic two-class dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=200, help="images per class")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--format", choices=["png", "ppm"], default="png")
    p.add_argument("outdir")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("split", help="assign group-disjoint train/valid/test splits")
    p.add_argument("--ratio", default="3:1:1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["exact", "stable"], default="exact")
    p.add_argument("--out", help="write here instead of rewriting the manifest")
    p.add_argument("manifest")
    p.set_defaults(fn=cmd_split)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        kernels.set_threads()
        return args.fn(args)
    except (ConfigError, InvalidColorSpace) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, MissingClass) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, SingularSystem, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
