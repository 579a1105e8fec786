"""SGD training loop with the step learning-rate schedule and checkpointing."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics
from .backbone import BackboneConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericalError, MissingClass
from .loss import FocalParams
from .model import Model, ModelConfig, FbcConfig, FUSIONS

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 0.01
    decay_factor: float = 10.0
    decay_every: int = 40
    lr_floor: float = 1e-4
    weight_decay: float = 5e-4
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 40
    seed: int = 0
    color_spaces: list = field(default_factory=lambda: ["RGB", "YCbCr"])
    fusion: str = "fbc"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    fbc: FbcConfig = field(default_factory=FbcConfig)
    focal: FocalParams = field(default_factory=FocalParams)
    selection: str = "best_valid"
    early_stopping: bool = False
    patience: int = 20

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if isinstance(self.fbc, dict):
            self.fbc = FbcConfig(**self.fbc)
        if isinstance(self.focal, dict):
            self.focal = FocalParams(**self.focal)
        self.color_spaces = list(self.color_spaces)
        if not self.lr0 >= self.lr_floor > 0:
            raise ConfigError("need lr0 >= lr_floor > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.decay_factor < 1 or self.decay_every < 1:
            raise ConfigError("decay_factor must be >= 1 and decay_every >= 1")
        if self.selection not in ("best_valid", "last"):
            raise ConfigError("selection must be 'best_valid' or 'last'")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}")

    @classmethod
    def from_dict(cls, d: dict):
        return _strict(cls, d)

    def to_dict(self):
        return asdict(self)

    def model_config(self):
        return ModelConfig(list(self.color_spaces), self.fusion, self.backbone, self.fbc)


_NESTED = {"backbone": BackboneConfig, "fbc": FbcConfig, "focal": FocalParams}


def _strict(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    kwargs = {}
    for k, v in d.items():
        sub = _NESTED.get(k) if cls is TrainConfig else None
        kwargs[k] = _strict(sub, v) if sub is not None else v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def lr_schedule(epoch, cfg: TrainConfig = TrainConfig()):
    """Step decay: divide by ``decay_factor`` every ``decay_every`` epochs, floored."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr = cfg.lr0 / cfg.decay_factor ** (epoch // cfg.decay_every)
    return max(lr, cfg.lr_floor)


def sgd_step(w, g, v, lr, momentum, weight_decay):
    """In-place momentum SGD: ``v <- m v + g + wd w``; ``w <- w - lr v``."""
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient")
    v *= momentum
    v += g
    if weight_decay:
        v += weight_decay * w
    w -= lr * v
    return w, v


def _decays(name):
    return not name.endswith(".b")


@dataclass
class TrainState:
    model: Model
    velocity: dict
    rng: np.random.Generator
    epoch: int = 0
    best_params: dict | None = None
    best_acer: float | None = None
    best_epoch: int = -1
    bad_epochs: int = 0
    history: list = field(default_factory=list)
    cfg: TrainConfig = None

    def selected_model(self):
        if self.cfg.selection == "best_valid" and self.best_params is not None:
            return Model(self.model.cfg, {k: v.copy() for k, v in self.best_params.items()})
        return self.model.copy()


def init_state(cfg: TrainConfig, dtype=np.float32):
    rng = np.random.default_rng(cfg.seed)
    model = Model.init(cfg.model_config(), rng, dtype)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    return TrainState(model, velocity, rng, cfg=cfg)


def _check_classes(labels, what):
    present = set(np.unique(labels).tolist())
    if present != {0, 1}:
        raise MissingClass(f"{what} split needs both classes, found {sorted(present)}")


def run_epoch(state: TrainState, xa, xb, labels):
    cfg = state.cfg
    lr = lr_schedule(state.epoch, cfg)
    order = state.rng.permutation(len(labels))
    total = 0.0
    correct = 0
    clamped = 0
    params = state.model.params
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        loss, grads, stats = state.model.loss_and_grads(xa[idx], xb[idx], labels[idx], cfg.focal)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at epoch {state.epoch}")
        total += loss * len(idx)
        correct += int(((stats["score"] >= 0.5).astype(int) == labels[idx]).sum())
        clamped += stats["clamped"]
        for name in sorted(params):
            wd = cfg.weight_decay if _decays(name) else 0.0
            sgd_step(params[name], grads[name], state.velocity[name], lr, cfg.momentum, wd)
    return {"lr": lr, "loss": total / len(labels), "train_acc": correct / len(labels), "clamped": clamped}


def train(cfg: TrainConfig, train_set, valid_set=None, state: TrainState | None = None,
          until_epoch=None, on_epoch=None):
    """Train (or resume) and return the final ``TrainState``.

    ``train_set``/``valid_set`` are ``data.ImageSet``. ``until_epoch`` stops
    early without finishing the schedule, which lets a later call resume.
    """
    if len(train_set) == 0:
        raise MissingClass("training split is empty")
    _check_classes(train_set.labels, "training")
    if state is None:
        state = init_state(cfg)
    dtype = state.model.dtype
    xa, xb = (s.astype(dtype) for s in train_set.streams(cfg.color_spaces))
    labels = train_set.labels
    if valid_set is not None and len(valid_set):
        va, vb = (s.astype(dtype) for s in valid_set.streams(cfg.color_spaces))
    else:
        valid_set = None

    stop = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
    while state.epoch < stop:
        entry = {"epoch": state.epoch}
        entry.update(run_epoch(state, xa, xb, labels))
        entry["valid_acer"] = None
        if valid_set is not None:
            scores = state.model.scores(va, vb)
            try:
                rep = metrics.report(scores, valid_set.labels, threshold=0.5)
                entry["valid_acer"] = rep["acer"]
                entry["valid_acc"] = rep["accuracy"]
            except MissingClass:
                pass
        acer = entry["valid_acer"]
        if acer is not None and (state.best_acer is None or acer < state.best_acer):
            state.best_acer = acer
            state.best_epoch = state.epoch
            state.best_params = {k: v.copy() for k, v in state.model.params.items()}
            state.bad_epochs = 0
        elif acer is not None:
            state.bad_epochs += 1
        state.history.append(entry)
        log.info("epoch %(epoch)d lr %(lr).4g loss %(loss).5f acc %(train_acc).4f", entry)
        if on_epoch is not None:
            on_epoch(entry)
        state.epoch += 1
        if cfg.early_stopping and state.bad_epochs >= cfg.patience:
            log.info("early stop at epoch %d", state.epoch)
            break
    return state


# checkpoints ---------------------------------------------------------------

def save_state(state: TrainState, path) -> None:
    tensors = {}
    for k, v in state.model.params.items():
        tensors[f"param/{k}"] = v
    for k, v in state.velocity.items():
        tensors[f"velocity/{k}"] = v
    if state.best_params is not None:
        for k, v in state.best_params.items():
            tensors[f"best/{k}"] = v
    meta = {
        "config": state.cfg.to_dict(),
        "epoch": state.epoch,
        "rng_state": state.rng.bit_generator.state,
        "best_acer": state.best_acer,
        "best_epoch": state.best_epoch,
        "bad_epochs": state.bad_epochs,
        "history": state.history,
    }
    save_checkpoint(path, tensors, meta)


def load_state(path) -> TrainState:
    tensors, header = load_checkpoint(path)
    cfg = TrainConfig.from_dict(header["config"])
    groups = {"param": {}, "velocity": {}, "best": {}}
    for name, arr in tensors.items():
        kind, key = name.split("/", 1)
        groups[kind][key] = arr
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    model = Model(cfg.model_config(), groups["param"])
    return TrainState(model, groups["velocity"], rng, header["epoch"],
                      groups["best"] or None, header["best_acer"], header["best_epoch"],
                      header["bad_epochs"], header["history"], cfg)


def load_model(path, which="selected") -> Model:
    state = load_state(path)
    if which == "last":
        return state.model
    return state.selected_model()
