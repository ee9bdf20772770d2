"""K-fold cross-validation, confusion matrices and fold reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .nn.model import ModelConfig
from .tensor_core import SeededRng, derive_seed
from .training import TrainConfig, TrainHistory, evaluate, train


class EvaluationError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tolist(self):
        return self.counts.tolist()


@dataclass
class FoldReport:
    fold: int
    train_ids: list
    test_ids: list
    confusion: ConfusionMatrix
    accuracy: float
    history: TrainHistory | None = field(default=None, repr=False)

    def to_dict(self):
        return {"fold": self.fold, "confusion": self.confusion.tolist(), "accuracy": self.accuracy,
                "train_ids": list(self.train_ids), "test_ids": list(self.test_ids)}


def kfold_split(n: int, k: int, seed: int):
    """Seeded permutation cut into ``k`` contiguous blocks; the first
    ``n % k`` blocks get one extra sample. Fold ``i`` tests on block ``i``."""
    if k < 2:
        raise EvaluationError("k must be >= 2")
    if n < k:
        raise EvaluationError(f"cannot split {n} samples into {k} folds")
    perm = SeededRng(derive_seed(seed, "kfold")).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test = perm[start:start + size]
        train_idx = np.concatenate([perm[:start], perm[start + size:]])
        folds.append((train_idx, test))
        start += size
    return folds


def confusion_matrix(preds, labels, k: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.intp)
    labels = np.asarray(labels, dtype=np.intp)
    if preds.shape != labels.shape:
        raise EvaluationError(f"{preds.size} predictions for {labels.size} labels")
    for arr, what in ((preds, "prediction"), (labels, "label")):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise EvaluationError(f"{what} outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def accuracy_from_confusion(cm) -> float:
    counts = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm)
    total = counts.sum()
    if counts.size == 0 or total == 0:
        raise EvaluationError("accuracy of an empty confusion matrix")
    return float(np.trace(counts) / total)


def mean_accuracy(accuracies) -> float:
    """Unweighted mean over folds."""
    accuracies = list(accuracies)
    if not accuracies:
        raise EvaluationError("no folds")
    return float(sum(accuracies) / len(accuracies))


def cross_validate(inputs, labels, ids, model_config: ModelConfig, train_config: TrainConfig, k: int = 5,
                   seed: int | None = None, progress=None):
    """Train one model per fold with seed ``train_config.seed + fold``.

    Returns:
        ``(reports, mean_accuracy)``.
    """
    seed = train_config.seed if seed is None else seed
    labels = np.asarray(labels)
    reports = []
    for fold, (tr, te) in enumerate(kfold_split(len(labels), k, seed)):
        cfg = replace(train_config, seed=train_config.seed + fold)
        try:
            state, history = train(inputs[tr], labels[tr], model_config, cfg)
        except Exception as exc:
            exc.args = (f"fold {fold + 1}: {exc}",) + exc.args[1:]
            exc.fold = fold + 1
            raise
        preds, _ = evaluate(state, inputs[te], model_config)
        cm = confusion_matrix(preds, labels[te], model_config.num_classes)
        rep = FoldReport(fold + 1, [ids[i] for i in tr], [ids[i] for i in te], cm,
                         accuracy_from_confusion(cm), history)
        reports.append(rep)
        if progress is not None:
            progress(rep)
    return reports, mean_accuracy(r.accuracy for r in reports)


def report_dict(reports, mean_acc, config) -> dict:
    return {"folds": [r.to_dict() for r in reports], "mean_accuracy": mean_acc, "config": config}


def render_text(reports, mean_acc, class_names=None) -> str:
    """Fold/accuracy table followed by per-fold confusion blocks."""
    lines = ["Fold     Test size  Accuracy"]
    for r in reports:
        lines.append(f"Fold#{r.fold:<3d} {len(r.test_ids):>9d}  {100 * r.accuracy:7.2f}%")
    lines.append(f"Average            {100 * mean_acc:7.2f}%")
    lines.append("")
    k = reports[0].confusion.counts.shape[0] if reports else 0
    names = class_names or [str(i) for i in range(k)]
    width = max([len(n) for n in names] + [5])
    lines.append(" " * width + "  " + "  ".join(f"{'fold ' + str(r.fold):>{4 * k + 2}}" for r in reports))
    for c, name in enumerate(names):
        cells = "  ".join(" ".join(f"{v:>{4}d}" for v in r.confusion.counts[c]) + "  " for r in reports)
        lines.append(f"{name:<{width}}  {cells}")
    return "\n".join(lines) + "\n"


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
