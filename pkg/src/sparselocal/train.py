"""Optimizers, the coarse-to-fine training loop, and accuracy evaluation.

Training runs in two phases. The coarse phase uses a generous gate count
and a high temperature so gradients reach every weight dimension, and
optimizes with Adam. Once validation loss stops improving, the fine
phase resets the gate count and temperature to their target values and
continues from the current parameters with momentum SGD at one tenth of
the Adam learning rate. Either phase can be disabled by setting its
epoch budget to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GateExhaustedError


class Adam:
    """Adam with bias correction; lr 1e-3, betas (0.9, 0.999), eps 1e-8 by default."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


class MomentumSGD:
    """Heavy-ball update: v <- momentum * v + grad; param <- param - lr * v."""

    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.v):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v


def zero_grads(params):
    for p in params:
        p.grad = None


@dataclass
class TrainSchedule:
    """Two-phase settings: Adam/high-tau/large-k first, momentum-SGD/low-tau/target-k second."""

    adam_lr: float = 1e-3
    momentum: float = 0.9
    k_coarse: int = 10
    k_target: int | None = None  # defaults to the model's configured k
    tau_coarse: float = 1.0
    tau_fine: float = 0.1
    batch_size: int = 64
    max_coarse_epochs: int = 50
    max_fine_epochs: int = 50
    patience: int = 5

    def __post_init__(self):
        if not self.tau_coarse > self.tau_fine > 0:
            raise ValueError("schedule requires tau_coarse > tau_fine > 0")
        if self.k_target is not None and not self.k_coarse >= self.k_target >= 1:
            raise ValueError("schedule requires k_coarse >= k_target >= 1")

    @property
    def fine_lr(self):
        return self.adam_lr / 10.0

    def to_dict(self):
        return {
            "adam_lr": self.adam_lr,
            "momentum": self.momentum,
            "k_coarse": self.k_coarse,
            "k_target": self.k_target,
            "tau_coarse": self.tau_coarse,
            "tau_fine": self.tau_fine,
            "batch_size": self.batch_size,
            "max_coarse_epochs": self.max_coarse_epochs,
            "max_fine_epochs": self.max_fine_epochs,
            "patience": self.patience,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(**payload)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo : lo + batch_size]


def _mean_loss(model, samples, batch_size, k, tau, rng):
    total = 0.0
    for lo in range(0, len(samples), batch_size):
        batch = samples[lo : lo + batch_size]
        loss = model.batch_loss(batch, k=k, tau=tau, rng=rng)
        total += float(loss.data) * len(batch)
    return total / len(samples)


def evaluate(model, samples, k=None, mode="hard", rng=None):
    """Fraction of samples whose gated prediction matches the label."""
    if not samples:
        return float("nan")
    predicted = model.predict_labels(samples, k=k, mode=mode, rng=rng)
    truth = np.array([s.y for s in samples])
    return float(np.mean(predicted == truth))


def _run_phase(model, phase, optimizer, k, tau, train, val, schedule, rng, log, lr, progress):
    params = model.parameters()
    best = np.inf
    stale = 0
    for _ in range(schedule.max_coarse_epochs if phase == "coarse" else schedule.max_fine_epochs):
        total = 0.0
        for idx in _batches(len(train), schedule.batch_size, rng):
            batch = [train[i] for i in idx]
            zero_grads(params)
            loss = model.batch_loss(batch, k=k, tau=tau, rng=rng)
            loss.backward()
            optimizer.step()
            total += float(loss.data) * len(batch)
        val_loss = _mean_loss(model, val, schedule.batch_size, k, tau, rng)
        record = {
            "epoch": len(log) + 1,
            "phase": phase,
            "tau": tau,
            "k": k,
            "lr": lr,
            "train_loss": total / len(train),
            "val_loss": val_loss,
            "val_acc": evaluate(model, val, k=k),
        }
        log.append(record)
        if progress is not None:
            progress(record)
        if val_loss < best - 1e-12:
            best = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= schedule.patience:
                break


def coarse_to_fine_train(model, train, val, schedule=None, rng=None, progress=None):
    """Run both phases and return the per-epoch log (one dict per epoch).

    The fine phase requires the target gate count to be feasible for
    every training sample; the coarse gate count is clamped per sample
    instead, since it is only a gradient-spreading device.
    """
    schedule = schedule or TrainSchedule()
    rng = rng if rng is not None else np.random.default_rng()
    if not train or not val:
        raise ValueError("training needs non-empty train and validation sets")
    k_target = model.config.k if schedule.k_target is None else schedule.k_target
    live = np.array([int((np.asarray(s.m) == 0).sum()) for s in train])
    if (live < k_target).any():
        bad = [train[i].id for i in np.flatnonzero(live < k_target)[:5]]
        raise GateExhaustedError(
            f"k={k_target} is infeasible for some training samples (e.g. ids {bad})"
        )

    log = []
    if schedule.max_coarse_epochs > 0:
        optimizer = Adam(model.parameters(), lr=schedule.adam_lr)
        _run_phase(
            model, "coarse", optimizer, min(schedule.k_coarse, model.config.d),
            schedule.tau_coarse, train, val, schedule, rng, log, schedule.adam_lr, progress,
        )
    if schedule.max_fine_epochs > 0:
        # fresh optimizer state: momentum starts at zero, Adam moments are dropped
        optimizer = MomentumSGD(model.parameters(), lr=schedule.fine_lr, momentum=schedule.momentum)
        _run_phase(
            model, "fine", optimizer, k_target, schedule.tau_fine,
            train, val, schedule, rng, log, schedule.fine_lr, progress,
        )
    return log


def train_plain(model, train, val, *, epochs, lr=1e-3, batch_size=64, rng=None, patience=None, loss_fn=None):
    """Single-phase Adam training for the ungated reference models.

    ``loss_fn(batch, rng)`` overrides the objective; the default is the
    model's own ``batch_loss``. Used for the plain classifier and for the
    dense (gate-free) ablation via ``dense_batch_loss``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if loss_fn is None:
        loss_fn = lambda batch, r: model.batch_loss(batch, rng=r)
    params = model.parameters()
    optimizer = Adam(params, lr=lr)
    log = []
    best = np.inf
    stale = 0
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(train), batch_size, rng):
            batch = [train[i] for i in idx]
            zero_grads(params)
            loss = loss_fn(batch, rng)
            loss.backward()
            optimizer.step()
            total += float(loss.data) * len(batch)
        record = {"epoch": epoch + 1, "train_loss": total / len(train)}
        if val:
            vtotal = 0.0
            for lo in range(0, len(val), batch_size):
                batch = val[lo : lo + batch_size]
                vtotal += float(loss_fn(batch, rng).data) * len(batch)
            record["val_loss"] = vtotal / len(val)
        log.append(record)
        if val and patience is not None:
            if record["val_loss"] < best - 1e-12:
                best, stale = record["val_loss"], 0
            else:
                stale += 1
                if stale >= patience:
                    break
    return log
