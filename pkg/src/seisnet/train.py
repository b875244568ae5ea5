"""Logistic-loss training with Adam over labelled windows."""

from __future__ import annotations

import configparser
import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import fileio
from .layers import Mode
from .model import ModelParams, backward, forward, load_weights, save_weights

log = logging.getLogger(__name__)


def _check_labels(y):
    y = np.asarray(y)
    if not np.all((y == 1) | (y == -1)):
        raise ValueError("labels must be -1 or +1")
    return y


def logistic_loss(y, z):
    """``log(1 + exp(-y z))`` without overflow for any finite ``z``."""
    y = _check_labels(y)
    m = -y * np.asarray(z, dtype=np.float64)
    # log1p(e^m) = max(m, 0) + log1p(e^-|m|)
    out = np.maximum(m, 0.0) + np.log1p(np.exp(-np.abs(m)))
    return float(out) if out.ndim == 0 else out


def logistic_loss_grad(y, z):
    """d/dz of the logistic loss: ``-y / (1 + exp(y z))``."""
    y = _check_labels(y)
    out = -y * expit(-y * np.asarray(z, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def preprocess(window) -> np.ndarray:
    """Z-score one window (or each row of a 2-D stack of windows).

    Windows with a standard deviation below 1e-12 come back as zeros.
    """
    w = np.asarray(window, dtype=np.float64)
    if w.shape[-1] < 2:
        raise ValueError("preprocess needs at least 2 samples")
    mean = w.mean(axis=-1, keepdims=True)
    centered = w - mean
    std = np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True))
    flat = std < 1e-12
    return np.where(flat, 0.0, centered / np.where(flat, 1.0, std))


@dataclass
class LabeledWindow:
    samples: np.ndarray
    label: int
    trace_id: str = ""
    start: int = 0
    source: str = "event"  # event | hand-picked-negative | random-negative

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label}")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)
    return params, state


@dataclass
class TrainConfig:
    batch_size: int = 50
    epochs: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 disables
    checkpoint_dir: str = ""
    oversample_positives: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @classmethod
    def from_config(cls, parser: configparser.ConfigParser, section="train", **overrides) -> "TrainConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        if parser.has_section(section):
            for key in parser[section]:
                if key not in types:
                    raise ValueError(f"[{section}] unknown key {key!r}")
                if types[key] in ("int", int):
                    kw[key] = parser[section].getint(key)
                elif types[key] in ("float", float):
                    kw[key] = parser[section].getfloat(key)
                elif types[key] in ("bool", bool):
                    kw[key] = parser[section].getboolean(key)
                else:
                    kw[key] = parser[section][key]
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def to_config(self, parser=None, section="train"):
        parser = parser or configparser.ConfigParser()
        parser[section] = {k: str(v) for k, v in asdict(self).items()}
        return parser


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    train_accuracy: float


def _stack(dataset):
    x = np.stack([np.asarray(w.samples, dtype=np.float32) for w in dataset])
    if x.ndim == 2:
        x = x[..., None]
    y = np.array([w.label for w in dataset], dtype=np.float64)
    return x, y


def train(dataset: list[LabeledWindow], params: ModelParams, cfg: TrainConfig,
          state: AdamState | None = None, start_epoch: int = 0):
    """Fit ``params`` (copied, not mutated) to ``dataset``.

    Returns ``(trained_params, history, adam_state)``. Each epoch shuffles
    the windows with a generator seeded from ``cfg.seed`` and the epoch
    index, so a resumed run follows the same order as an uninterrupted one.
    """
    labels = {w.label for w in dataset}
    if labels != {-1, 1}:
        raise ValueError(f"training data must contain both labels, found {sorted(labels)}")
    x, y = _stack(dataset)
    if x.shape[1:] != (params.spec.input_length, params.spec.input_channels):
        raise ValueError(f"windows have shape {x.shape[1:]}, model expects "
                         f"{(params.spec.input_length, params.spec.input_channels)}")
    params = params.copy()
    if state is None:
        state = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    named = params.trainable()
    history: list[EpochRecord] = []
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y < 0)
    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        if cfg.oversample_positives and 0 < len(pos) < len(neg):
            extra = rng.choice(pos, size=len(neg) - len(pos), replace=True)
            order = rng.permutation(np.concatenate([pos, neg, extra]))
        else:
            order = rng.permutation(len(y))
        total_loss = 0.0
        correct = 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            # a one-sample batch of length-1 maps cannot be batch-normalised
            if len(idx) * params.spec.input_length < 2:
                continue
            z, tape = forward(xb, params, Mode.TRAIN)
            total_loss += float(np.sum(logistic_loss(yb, z)))
            correct += int(np.sum(np.sign(z) == yb))
            grad_z = logistic_loss_grad(yb, z) / len(idx)
            grads = backward(grad_z, tape, params)
            adam_step(named, grads, state)
            params.step += 1
        rec = EpochRecord(epoch + 1, total_loss / len(order), correct / len(order))
        history.append(rec)
        log.info("epoch %d loss %.5f acc %.4f", rec.epoch, rec.mean_loss, rec.train_accuracy)
        if cfg.checkpoint_every and cfg.checkpoint_dir and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(Path(cfg.checkpoint_dir) / f"epoch{epoch + 1:04d}", params, state, epoch + 1)
    return params, history, state


def write_history_csv(history: list[EpochRecord], path) -> None:
    with fileio.atomic_write(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "train_accuracy"])
        for r in history:
            w.writerow([r.epoch, repr(r.mean_loss), repr(r.train_accuracy)])


def save_checkpoint(prefix, params: ModelParams, state: AdamState, epoch: int) -> tuple[Path, Path]:
    """Write ``<prefix>.weights`` and ``<prefix>.adam``."""
    prefix = Path(prefix)
    wpath = prefix.with_name(prefix.name + ".weights")
    apath = prefix.with_name(prefix.name + ".adam")
    save_weights(params, wpath)
    header = {"kind": "seisnet-adam", "epoch": epoch, "t": state.t, "lr": state.lr,
              "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps}
    tensors = [(f"m.{k}", v) for k, v in state.m.items()] + [(f"v.{k}", v) for k, v in state.v.items()]
    fileio.write_container(apath, header, tensors)
    return wpath, apath


def load_checkpoint(prefix) -> tuple[ModelParams, AdamState, int]:
    prefix = Path(prefix)
    params = load_weights(prefix.with_name(prefix.name + ".weights"))
    header, tensors = fileio.read_container(prefix.with_name(prefix.name + ".adam"))
    if header.get("kind") != "seisnet-adam":
        raise ValueError(f"{prefix}.adam is not an optimizer checkpoint")
    state = AdamState(header["lr"], header["beta1"], header["beta2"], header["eps"], header["t"])
    for name, arr in tensors.items():
        kind, key = name.split(".", 1)
        (state.m if kind == "m" else state.v)[key] = arr
    return params, state, int(header["epoch"])
