"""Minibatch Adam training on the summed sequence NLL."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .likelihood import batch_loglik, draw_mc_points, nll, pack
from .model import Model

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message, last_finite_loss, batch_index, epoch):
        super().__init__(f"{message} (epoch {epoch}, batch {batch_index}, last finite loss {last_finite_loss})")
        self.last_finite_loss = last_finite_loss
        self.batch_index = batch_index
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    warmup_frac: float = 0.01
    batch_size: int = 128
    epochs: int = 300
    clip: float = 1e4
    mc_points: int | None = None   # None: max(10, 5 * n_events) per sequence
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.clip <= 0 or self.epochs < 0:
            raise ValueError("lr, batch_size and clip must be positive, epochs non-negative")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.mc_points is not None and self.mc_points < 1:
            raise ValueError("mc_points must be at least 1")


class Adam:
    def __init__(self, params: ad.ParamStore, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.t = 0

    def step(self, lr: float, scale: float = 1.0) -> None:
        """One update using the store's gradients multiplied by ``scale``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in self.params.values.items():
            g = self.params.grads[k] * scale
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def warmup_lr(step: int, total: int, cfg: TrainConfig) -> float:
    n_warm = int(math.ceil(cfg.warmup_frac * total))
    if n_warm == 0 or step >= n_warm:
        return cfg.lr
    return cfg.lr * (step + 1) / n_warm


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    val_nll: float
    lr: float


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)
    best_epoch: int = 0
    seconds: float = 0.0

    def history_csv(self, header: list | None = None) -> str:
        buf = io.StringIO()
        for line in header or []:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_nll", "val_nll", "lr"])
        for r in self.history:
            w.writerow([r.epoch, repr(r.train_nll), repr(r.val_nll), repr(r.lr)])
        return buf.getvalue()


def batch_loss(model: Model, P, seqs, rng, mc_points=None):
    batch = pack(seqs, model.K)
    mc = draw_mc_points(batch, rng, mc_points)
    lt, ls = batch_loglik(model, P, batch, mc)
    return ad.neg(ad.sum_(ad.add(lt, ls)))


def _val_nll(model, val, cfg, epoch):
    if val is None or len(val) == 0:
        return float("nan")
    return nll(model, val, cfg.mc_points, seed=cfg.seed + 7919 * (epoch + 1))[1]


def train(model: Model, train_data: Dataset, val_data: Dataset | None, cfg: TrainConfig,
          callback=None) -> TrainResult:
    """Train ``model`` in place. Per-sequence mean NLLs are recorded per epoch;
    the parameters with the best validation NLL are restored at the end."""
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    n = len(train_data)
    n_batches = max(1, math.ceil(n / cfg.batch_size)) if n else 0
    total_steps = n_batches * cfg.epochs
    opt = Adam(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    result = TrainResult(model)
    best_val = _val_nll(model, val_data, cfg, -1)
    best_params = model.params.copy()
    last_finite = float("nan")
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        lr = cfg.lr
        for b in range(n_batches):
            seqs = [train_data.sequences[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            model.params.zero_grad()
            try:
                loss = batch_loss(model, model.params.leaves(), seqs, rng, cfg.mc_points)
                ad.backward(loss)
            except (ad.NumericalError, np.linalg.LinAlgError) as exc:
                raise TrainingAborted(f"numerical failure: {exc}", last_finite, b, epoch) from exc
            value = float(ad.value(loss))
            gnorm = model.params.grad_norm()
            if not (math.isfinite(value) and math.isfinite(gnorm)):
                raise TrainingAborted("non-finite loss or gradient", last_finite, b, epoch)
            last_finite = value
            total += value
            lr = warmup_lr(step, total_steps, cfg)
            opt.step(lr, min(1.0, cfg.clip / gnorm) if gnorm > 0 else 1.0)
            step += 1
        val = _val_nll(model, val_data, cfg, epoch)
        rec = EpochRecord(epoch + 1, total / max(n, 1), val, lr)
        result.history.append(rec)
        log.info("epoch %d train_nll %.4f val_nll %.4f", rec.epoch, rec.train_nll, rec.val_nll)
        if callback is not None:
            callback(rec)
        if not math.isnan(val) and (math.isnan(best_val) or val < best_val):
            best_val, best_params, result.best_epoch = val, model.params.copy(), epoch + 1
        elif math.isnan(best_val) and math.isnan(val):
            best_params, result.best_epoch = model.params.copy(), epoch + 1
    for k, v in best_params.values.items():
        model.params[k] = v
    result.seconds = time.perf_counter() - start
    return result
