"""Accumulated two-stage loss, Adam and the frame-batched training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import DataError, DimensionError
from .config import ModelConfig
from .features import FeatureBundle, concat_bundles
from .model import MTMSNet, ModelParams
from .nn import Tensor, add, backward, binary_cross_entropy2, mse, mul

log = logging.getLogger(__name__)

CLAMP_DELTA = 1e-7


def _check(a: np.ndarray, b: np.ndarray, what: str):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"{what}: prediction {np.shape(a)} and target {np.shape(b)} differ")


def loss_stage1(irm_hat, irm, ri_hat, ri):
    """MSE of the IRM plus MSE of the RI spectrum, each averaged over its own elements.

    Works on plain arrays (returns a float) or on tensors (returns a graph node).
    """
    if isinstance(irm_hat, Tensor):
        return add(mse(irm_hat, irm), mse(ri_hat, ri))
    _check(irm_hat, irm, "irm")
    _check(ri_hat, ri, "ri")
    return float(np.mean((np.asarray(irm_hat) - irm) ** 2) + np.mean((np.asarray(ri_hat) - ri) ** 2))


def loss_stage2(xibar_hat, xibar):
    """Base-2 cross-entropy between compressed SNR estimate and target."""
    if isinstance(xibar_hat, Tensor):
        return binary_cross_entropy2(xibar_hat, xibar, CLAMP_DELTA)
    _check(xibar_hat, xibar, "xibar")
    p = np.clip(np.asarray(xibar_hat, dtype=np.float64), CLAMP_DELTA, 1 - CLAMP_DELTA)
    x = np.asarray(xibar, dtype=np.float64)
    return float(-np.mean(x * np.log2(p) + (1 - x) * np.log2(1 - p)))


def total_loss(l1, l2, alpha: float = 1.0, beta: float = 1.0):
    if isinstance(l1, Tensor) or isinstance(l2, Tensor):
        return add(mul(l1, alpha), mul(l2, beta))
    return alpha * l1 + beta * l2


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam; updates ``params`` arrays in place."""
    b1, b2 = betas
    state.step += 1
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def batch_loss(net: MTMSNet, batch: FeatureBundle, training: bool, rng) -> tuple[Tensor, Tensor, Tensor]:
    cfg = net.cfg
    s1, _, xibar_hat = net.forward(batch.frames, batch.lps, batch.ri, training, rng)
    l1 = loss_stage1(s1.irm_hat, batch.irm.T[None], s1.ri_hat, batch.clean_ri.T[None])
    l2 = loss_stage2(xibar_hat, batch.xibar.T[None])
    return l1, l2, total_loss(l1, l2, cfg.alpha, cfg.beta)


def make_batches(corpus: Sequence[FeatureBundle], batch_frames: int) -> list[FeatureBundle]:
    """Consecutive frames of the concatenated corpus; the final partial batch is kept."""
    if not corpus:
        raise DataError("training corpus is empty")
    whole = concat_bundles(corpus)
    n = whole.n_frames
    if n == 0:
        raise DataError("training corpus has no frames")
    out = []
    for s in range(0, n, batch_frames):
        sl = slice(s, min(s + batch_frames, n))
        out.append(FeatureBundle(*(getattr(whole, f)[sl] for f in
                                   ("frames", "lps", "ri", "irm", "clean_ri", "xibar"))))
    return out


@dataclass
class LossRecord:
    step: int
    loss1: float
    loss2: float
    total: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[LossRecord]
    val_history: list[float] = field(default_factory=list)
    stopped_early: bool = False


def evaluate_loss(net: MTMSNet, batches: Sequence[FeatureBundle]) -> float:
    total = 0.0
    frames = 0
    for b in batches:
        *_, t = batch_loss(net, b, False, None)
        total += float(t.data) * b.n_frames
        frames += b.n_frames
    return total / frames


def train_loop(net: MTMSNet, corpus: Sequence[FeatureBundle], epochs: int | None = None,
               steps: int | None = None, seed: int = 0, val_corpus: Sequence[FeatureBundle] | None = None,
               log_every: int = 0) -> TrainResult:
    """Adam over batches of ``cfg.batch_frames`` consecutive frames.

    Runs ``steps`` updates if given, otherwise ``epochs`` passes.  Batch
    order is shuffled per epoch; frames inside a batch keep corpus order.
    With a validation corpus, training stops once the validation loss has
    not improved for ``cfg.patience`` epochs.
    """
    cfg: ModelConfig = net.cfg
    if steps is None and epochs is None:
        raise ValueError("give steps or epochs")
    batches = make_batches(corpus, cfg.batch_frames)
    val_batches = make_batches(val_corpus, cfg.batch_frames) if val_corpus else None
    rng = np.random.default_rng(seed)
    leaves = net.bind(True)
    state = AdamState()
    history: list[LossRecord] = []
    val_history: list[float] = []
    best = np.inf
    stale = 0
    step = 0
    epoch = 0
    stopped = False
    try:
        while True:
            if epochs is not None and epoch >= epochs:
                break
            for bi in rng.permutation(len(batches)):
                if steps is not None and step >= steps:
                    break
                l1, l2, tot = batch_loss(net, batches[bi], True, rng)
                for leaf in leaves.values():
                    leaf.grad = None
                backward(tot)
                grads = {n: t.grad for n, t in leaves.items() if t.grad is not None}
                adam_step(net.params.tensors, grads, state, lr=cfg.lr)
                step += 1
                history.append(LossRecord(step, float(l1.data), float(l2.data), float(tot.data)))
                if log_every and step % log_every == 0:
                    r = history[-1]
                    log.info("step %d loss1=%.4f loss2=%.4f total=%.4f", r.step, r.loss1, r.loss2, r.total)
            epoch += 1
            if val_batches is not None:
                v = evaluate_loss(net, val_batches)
                val_history.append(v)
                if v < best - 1e-12:
                    best, stale = v, 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        stopped = True
                        break
            if steps is not None and step >= steps:
                break
    finally:
        net.bind(False)
    return TrainResult(net.params, history, val_history, stopped)


def write_loss_csv(history: Sequence[LossRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss1", "loss2", "total"])
        for r in history:
            w.writerow([r.step, repr(r.loss1), repr(r.loss2), repr(r.total)])
