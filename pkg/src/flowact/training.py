"""Cross-entropy loss, SGD with optional L2 penalty, learning-rate schedules
and the training loop."""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import model as M
from .nn.layers import softmax
from .tensor_core import NumericError, SeededRng, ShapeError, derive_seed, profile_dtype

log = logging.getLogger(__name__)

LOG_EPS = 1e-12
SCHEDULES = ("constant", "optimal")
PENALTIES = ("none", "l2")


class ConfigError(ValueError):
    pass


class LabelError(ValueError):
    pass


class TrainingDiverged(NumericError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.01
    schedule: str = "constant"
    alpha: float = 0.0
    t0: float = 1.0
    penalty: str = "none"
    seed: int = 0
    profile: str = "f32"

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if self.penalty not in PENALTIES:
            raise ConfigError(f"penalty must be one of {PENALTIES}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.schedule == "optimal":
            if self.alpha == 0:
                raise ConfigError("optimal schedule divides by alpha; alpha must be > 0")
            if self.t0 <= 0:
                raise ConfigError("optimal schedule needs t0 > 0")
        profile_dtype(self.profile)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    acc: float
    lr: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def append(self, rec: EpochRecord):
        self.epochs.append(rec)

    def __len__(self):
        return len(self.epochs)

    def to_csv(self) -> str:
        lines = ["epoch,loss,acc,lr,seconds"]
        for r in self.epochs:
            lines.append(f"{r.epoch},{r.loss!r},{r.acc!r},{r.lr!r},{r.seconds:.3f}")
        return "\n".join(lines) + "\n"


def cce_loss(probs, onehot):
    """Mean categorical cross-entropy and its gradient w.r.t. the pre-softmax
    logits, ``(probs - onehot) / batch``."""
    probs = np.asarray(probs)
    onehot = np.asarray(onehot)
    if probs.shape != onehot.shape or probs.ndim != 2:
        raise ShapeError(f"probs {probs.shape} and labels {onehot.shape} must be equal (batch, k)")
    if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
        raise LabelError("labels must be one-hot rows")
    n = probs.shape[0]
    loss = -float(np.sum(onehot * np.log(probs + LOG_EPS))) / n
    return loss, (probs - onehot) / n


def one_hot(labels, k, dtype=np.float64):
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"label out of range [0, {k})")
    out = np.zeros((labels.size, k), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def lr_schedule(t: int, config: TrainConfig) -> float:
    """Learning rate at update ``t``: constant ``lr``, or ``1 / (alpha (t0 + t))``."""
    if t < 0:
        raise ValueError("step index must be >= 0")
    if config.schedule == "constant":
        return config.lr
    if config.alpha == 0:
        raise ConfigError("optimal schedule needs alpha > 0")
    return 1.0 / (config.alpha * (config.t0 + t))


def is_regularized(name: str) -> bool:
    return not name.endswith(".bias")


def sgd_step(state, grads, lr: float, alpha: float = 0.0, penalty: str = "none"):
    """Return a new state ``w - lr (alpha dR/dw + dL/dw)`` with ``R = |w|^2 / 2``
    for ``penalty='l2'``. Bias parameters are never penalized."""
    if set(state) != set(grads):
        raise ShapeError(f"gradient names differ from state: {sorted(set(state) ^ set(grads))}")
    new = OrderedDict()
    for name, w in state.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {w.shape}")
        step = g
        if penalty == "l2" and alpha and is_regularized(name):
            step = g + alpha * w
        new[name] = (w - lr * step).astype(w.dtype, copy=False)
    return new


def loss_and_grads(state, x, y, config: M.ModelConfig):
    logits, cache = M.forward(x, state, config)
    probs = softmax(logits)
    loss, g_logits = cce_loss(probs, one_hot(y, config.num_classes, probs.dtype))
    return loss, probs, M.backward(g_logits.astype(probs.dtype), cache, config)


def train(inputs, labels, model_config: M.ModelConfig, train_config: TrainConfig, state=None,
          progress=None):
    """Minibatch SGD over ``inputs`` (n, T, H, W, C) with integer ``labels``.

    Initial weights come from ``derive_seed(seed, "init")`` unless ``state``
    is given; epoch shuffles from ``derive_seed(seed, "shuffle")``.

    Returns:
        ``(state, history)``.
    """
    dtype = profile_dtype(train_config.profile)
    inputs = np.asarray(inputs)
    n = len(inputs)
    if n == 0:
        raise ValueError("empty training set")
    labels = np.asarray(labels)
    if state is None:
        state = M.init_params(model_config, SeededRng(derive_seed(train_config.seed, "init")), dtype)
    history = TrainHistory()
    shuffle_rng = SeededRng(derive_seed(train_config.seed, "shuffle"))
    step = 0
    lr = lr_schedule(0, train_config)
    bs = train_config.batch_size
    for epoch in range(train_config.epochs):
        t_start = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            x = np.asarray(inputs[idx], dtype=dtype)
            y = labels[idx]
            loss, probs, grads = loss_and_grads(state, x, y, model_config)
            lr = lr_schedule(step, train_config)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}, lr {lr}")
            state = sgd_step(state, grads, lr, train_config.alpha, train_config.penalty)
            step += 1
            total_loss += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == y))
        rec = EpochRecord(epoch + 1, total_loss / n, correct / n, lr, time.perf_counter() - t_start)
        history.append(rec)
        log.info("epoch %d loss %.4f acc %.3f lr %.4g", rec.epoch, rec.loss, rec.acc, rec.lr)
        if progress is not None:
            progress(rec)
    return state, history


def evaluate(state, inputs, model_config: M.ModelConfig, batch_size: int = 8):
    """Predicted class indices and probabilities."""
    dtype = state["dense.weight"].dtype
    probs = M.predict(np.asarray(inputs, dtype=dtype), state, model_config, batch_size)
    return probs.argmax(axis=1), probs
