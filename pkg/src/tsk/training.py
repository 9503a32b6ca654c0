"""Losses, Adam with step decay, and the deterministic training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .heads import Model
from .tensor import Tensor, backward, logsumexp, softplus

log = logging.getLogger(__name__)


class TaskMismatchError(ValueError):
    """The dataset's task cannot be learned by the given head."""


# -- losses -------------------------------------------------------------------


def bce_multilabel_loss(logits: Tensor, z) -> Tensor:
    """Summed binary cross-entropy of sigmoid(logits) against multi-hot ``z``.

    Uses ``softplus(x) - z*x``, which equals ``-[z log p + (1-z) log(1-p)]``
    without ever forming log(0).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != logits.shape:
        raise ValueError(f"labels shape {z.shape} does not match logits {logits.shape}")
    return (softplus(logits) - logits * z).sum()


def per_frame_bce(logits: Tensor, z) -> Tensor:
    """Binary cross-entropy summed over frames and classes (T x C)."""
    z = np.asarray(z, dtype=np.float64)
    if logits.ndim != 2 or z.shape != logits.shape:
        raise ValueError(f"per-frame labels {z.shape} do not match logits {logits.shape}")
    return bce_multilabel_loss(logits, z)


def l1_speed_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error; the subgradient at equality is 0."""
    target = np.asarray(target, dtype=np.float64)
    return (pred - target).abs().mean()


def pitch_type_loss(logits: Tensor, label: int) -> Tensor:
    """Softmax cross-entropy for one of K mutually exclusive pitch types."""
    K = logits.shape[-1]
    if K < 2:
        raise ValueError("pitch-type loss needs at least 2 classes")
    if not 0 <= int(label) < K:
        raise ValueError(f"label {label} out of range for {K} classes")
    return logsumexp(logits, axis=-1) - logits[int(label)]


# -- optimizer ----------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    decay_factor: float = 0.1
    decay_every: int = 10
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.epochs < 1 or self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("epochs, batch_size and decay_every must be >= 1")


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    # decimal arithmetic so 0.01 * 0.1**2 lands on the float nearest 1e-4
    steps = epoch // config.decay_every
    return float(Decimal(repr(config.learning_rate)) * Decimal(repr(config.decay_factor)) ** steps)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place.

    Parameters missing from ``grads`` are treated as having zero gradient.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- training loop ------------------------------------------------------------


def example_loss(model: Model, features, target, task: str) -> Tensor:
    out = model(features)
    if task == "multilabel":
        return bce_multilabel_loss(out, target)
    if task == "detection":
        return per_frame_bce(out, target)
    if task == "speed":
        cfg = model.config
        return l1_speed_loss(out.reshape(()), (float(target) - cfg.target_offset) / cfg.target_scale)
    if task == "pitch_type":
        return pitch_type_loss(out, int(target))
    raise TaskMismatchError(f"unknown task {task!r}")


def check_task(model: Model, task: str) -> None:
    if model.config.task != task:
        raise TaskMismatchError(
            f"head {model.config.kind!r} was configured for task {model.config.task!r}, dataset is {task!r}"
        )


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    eval_metric: float


def train(model: Model, dataset, config: TrainConfig, eval_set=None, eval_every: int = 1):
    """Fit ``model`` on ``dataset`` with Adam and step decay.

    ``dataset`` (and ``eval_set``) is a :class:`tsk.data.LabeledSet`.  The
    metric recorded per epoch is evaluated on ``eval_set`` when given, else on
    the training data; ``eval_every=0`` skips it (recorded as NaN).  Returns
    ``(model, history)``.
    """
    from .evaluation import evaluate_model

    if not len(dataset):
        raise ValueError("cannot train on an empty dataset")
    check_task(model, dataset.task)
    if eval_set is not None:
        check_task(model, eval_set.task)
    task = dataset.task
    if task == "speed":
        targets = np.array([ex.target for ex in dataset], dtype=np.float64)
        model.config.target_offset = float(np.median(targets))
        model.config.target_scale = float(max(targets.std(), 1e-6))

    rng = np.random.default_rng(config.seed)
    state = AdamState()
    params = {k: p.data for k, p in model.parameters.items()}
    history: list[EpochRecord] = []
    n = len(dataset)
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = [dataset[int(i)] for i in order[start:start + config.batch_size]]
            model.zero_grad()
            loss = example_loss(model, batch[0].features, batch[0].target, task)
            for ex in batch[1:]:
                loss = loss + example_loss(model, ex.features, ex.target, task)
            loss = loss * (1.0 / len(batch))
            backward(loss)
            total += loss.item() * len(batch)
            grads = {k: p.grad for k, p in model.parameters.items() if p.grad is not None}
            adam_step(state, params, grads, lr)
        metric = float("nan")
        if eval_every and ((epoch + 1) % eval_every == 0 or epoch == config.epochs - 1):
            metric = evaluate_model(model, eval_set if eval_set is not None else dataset)["metric"]
        history.append(EpochRecord(epoch, lr, total / n, metric))
        log.info("epoch %d lr %.2e loss %.5f metric %.4f", epoch, lr, total / n, metric)
    model.zero_grad()
    return model, history


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "lr", "train_loss", "eval_metric"])
        for r in history:
            w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.eval_metric)])
