"""Mini-batch Adam training of the pair discriminator with step learning-rate
decay and random swapping of the mask order."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import PairTensors
from .net import MsnArch, MsnModel, desk_arch, forward, init_model, loss_and_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 512
    lr: float = 0.01
    epochs: int = 40
    decay: float = 0.1
    decay_every: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle_order: bool = True
    val_fraction: float = 0.1
    micro_batch: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** (epoch // self.decay_every)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: MsnModel
    history: list[dict] = field(default_factory=list)
    train_idx: Optional[np.ndarray] = None
    val_idx: Optional[np.ndarray] = None


class Adam:
    def __init__(self, model: MsnModel, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in model.params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in model.params]
        self.t = 0

    def step(self, model: MsnModel, grads, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(model.params, grads, self.m, self.v):
            for k in p:
                m[k] *= self.b1
                m[k] += (1.0 - self.b1) * g[k]
                v[k] *= self.b2
                v[k] += (1.0 - self.b2) * g[k] * g[k]
                step = lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.eps)
                p[k] -= step.astype(p[k].dtype)


def batch_grad(model: MsnModel, x, y, micro: int):
    """Mean loss/gradient over a batch, summed micro-batch by micro-batch in
    a fixed order so results do not depend on memory layout."""
    n = len(y)
    total_loss = 0.0
    acc = None
    for s in range(0, n, micro):
        xs, ys = x[s:s + micro], y[s:s + micro]
        w = len(ys) / n
        loss, grads, _ = loss_and_grad(model, xs, ys)
        total_loss += w * loss
        if acc is None:
            acc = [{k: w * g[k] for k in g} for g in grads]
        else:
            for a, g in zip(acc, grads):
                for k in g:
                    a[k] += w * g[k]
    return total_loss, acc


def predict(model: MsnModel, data: PairTensors, idx, chunk: int = 256):
    """Raw P(first better) and order-symmetrised P for each sample."""
    idx = np.asarray(idx)
    raw, sym = [], []
    for s in range(0, len(idx), chunk):
        part = idx[s:s + chunk]
        x, _ = data.batch(part, dtype=model.dtype)
        xs, _ = data.batch(part, swap=np.ones(len(part), bool), dtype=model.dtype)
        p_ab = forward(model, x).probability
        p_ba = forward(model, xs).probability
        raw.append(p_ab)
        sym.append(0.5 + 0.5 * (p_ab - p_ba))
    if not raw:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(raw), np.concatenate(sym)


def accuracy(prob, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    pred = (np.asarray(prob) >= 0.5).astype(float)
    return float(np.mean(pred == np.asarray(labels)))


def split_indices(n: int, val_fraction: float, seed: int):
    rng = np.random.default_rng([seed, 1])
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(
    data: PairTensors,
    config: Optional[TrainConfig] = None,
    arch: Optional[MsnArch] = None,
    dtype=np.float32,
    init: Optional[MsnModel] = None,
) -> TrainResult:
    config = config or TrainConfig()
    if len(data) == 0:
        raise ValueError("empty dataset")
    arch = arch or desk_arch(data.size)
    if arch.input_size != data.size:
        raise ValueError(f"dataset crops are {data.size}px but the architecture expects {arch.input_size}px")
    train_idx, val_idx = split_indices(len(data), config.val_fraction, config.seed)
    model = init.copy() if init is not None else init_model(arch, seed=config.seed, dtype=dtype)
    opt = Adam(model, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng([config.seed, 2])
    history = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(train_idx)
        swap = rng.random(len(order)) < 0.5 if config.shuffle_order else np.zeros(len(order), bool)
        losses = []
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            x, y = data.batch(idx, swap[s:s + config.batch_size], dtype=model.dtype)
            loss, grads = batch_grad(model, x, y, config.micro_batch)
            opt.step(model, grads, lr)
            losses.append((loss, len(idx)))
        train_loss = sum(l * n for l, n in losses) / max(1, sum(n for _, n in losses))
        rec = {"epoch": epoch + 1, "lr": lr, "train_loss": float(train_loss)}
        if len(val_idx):
            raw, sym = predict(model, data, val_idx)
            y = data.labels[val_idx]
            eps = 1e-12
            rec["val_loss"] = float(-np.mean(y * np.log(raw + eps) + (1 - y) * np.log(1 - raw + eps)))
            rec["val_acc"] = accuracy(raw, y)
            rec["val_acc_sym"] = accuracy(sym, y)
        history.append(rec)
        log.info("epoch %d %s", epoch + 1, {k: round(v, 4) for k, v in rec.items()})
    return TrainResult(model, history, train_idx, val_idx)
