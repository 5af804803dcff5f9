"""Losses, ADAM and the mini-batch training loop."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..tensorio import read_tensor, rng_stream, write_tensor
from .layers import loss_forward
from .network import UNet, UNetConfig

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RCKPT1\n"


class TrainingError(RuntimeError):
    """Non-finite loss or gradient during training."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 350
    batch: int = 8
    lr: float = 1e-3
    loss: str = "L2"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or self.lr <= 0:
            raise ValueError("epochs, batch must be >= 1 and lr > 0")
        object.__setattr__(self, "loss", self.loss.upper())
        if self.loss not in ("L1", "L2"):
            raise ValueError(f"unknown loss {self.loss!r}")


def loss(pred: np.ndarray, truth: np.ndarray, kind: str = "L2") -> tuple[float, np.ndarray]:
    """Scalar loss and its gradient w.r.t. ``pred`` (L1 subgradient 0 at ties)."""
    return loss_forward(pred, truth, kind)


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected ADAM update; returns new parameter arrays and state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name} at step {state.t + 1}")
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name].astype(np.float64)
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[name] = (p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new)


def batch_gradient(net: UNet, inputs: Sequence[np.ndarray], targets: Sequence[np.ndarray],
                   kind: str) -> tuple[list[float], dict[str, np.ndarray]]:
    """Per-sample losses and the batch-mean gradient, accumulated in sample order."""
    total: dict[str, np.ndarray] = {}
    losses = []
    for x, y in zip(inputs, targets):
        pred, tape = net.forward(x)
        value, g = loss(pred, y, kind)
        if not np.isfinite(value):
            raise TrainingError("non-finite loss")
        grads, _ = net.backward(tape, g)
        for k, v in grads.items():
            total[k] = total[k] + v if k in total else v.astype(np.float64)
        losses.append(value)
    n = len(losses)
    return losses, {k: v / n for k, v in total.items()}


@dataclass
class TrainResult:
    net: UNet
    history: list[float]
    initial_loss: float


def train(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    unet_cfg: UNetConfig,
    train_cfg: TrainConfig,
    checkpoint_dir: str | Path | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train a residual U-Net on (aliased, truth) pairs.

    The history holds the mean per-sample loss of each epoch, measured on
    the forward passes used for the updates.
    """
    if not pairs:
        raise ValueError("empty training set")
    shape = pairs[0][0].shape
    for a, t in pairs:
        if a.shape != shape or t.shape != shape:
            raise ValueError("all samples must share one shape")
    net = UNet(unet_cfg, seed=train_cfg.seed)
    state = AdamState()
    initial = float(np.mean([loss(net(a), t, train_cfg.loss)[0] for a, t in pairs]))
    history = []
    n = len(pairs)
    for epoch in range(train_cfg.epochs):
        order = rng_stream(train_cfg.seed, "shuffle", epoch).permutation(n)
        epoch_losses = []
        for start in range(0, n, train_cfg.batch):
            idx = order[start:start + train_cfg.batch]
            losses, grads = batch_gradient(
                net, [pairs[i][0] for i in idx], [pairs[i][1] for i in idx], train_cfg.loss)
            net.params, state = adam_step(net.params, grads, state, train_cfg)
            net.bump()
            epoch_losses.extend(losses)
        mean_loss = float(np.mean(epoch_losses))
        history.append(mean_loss)
        log.info("epoch %d/%d loss %.6g", epoch + 1, train_cfg.epochs, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
        if (checkpoint_dir is not None and train_cfg.checkpoint_every
                and (epoch + 1) % train_cfg.checkpoint_every == 0):
            save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}.ckpt", net)
    return TrainResult(net, history, initial)


# ------------------------------------------------------------------ persistence


def save_checkpoint(path: str | Path, net: UNet, extra: dict | None = None) -> None:
    """JSON header line (config + layer manifest) followed by RCT1 tensors."""
    names = sorted(net.params)
    header = {
        "config": net.config.to_dict(),
        "layers": [{"name": k, "shape": list(net.params[k].shape)} for k in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for k in names:
            write_tensor(fh, net.params[k].astype(np.float32))


def load_checkpoint(path: str | Path) -> tuple[UNet, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        size = int.from_bytes(fh.read(4), "little")
        header = json.loads(fh.read(size))
        params = {}
        for entry in header["layers"]:
            arr = read_tensor(fh)
            if list(arr.shape) != entry["shape"]:
                raise ValueError(f"{path}: layer {entry['name']} has shape {arr.shape}")
            params[entry["name"]] = arr
    cfg = UNetConfig(**header["config"])
    return UNet(cfg, params), header.get("extra", {})


def history_csv(history: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "mean_loss"])
    for i, v in enumerate(history, 1):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()
