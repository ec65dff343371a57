"""Training loop, confusion-matrix evaluation and report emission."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import MALIMG_DIR_ALIASES, MALIMG_TABLE, CorpusIndex, batch_iter
from .errors import DivergedLoss, IoFailure
from .models import AUX_WEIGHT, Model
from .nn.optim import sgd_momentum_update
from .rng import derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    patience: int | None = None
    aux_weight: float = AUX_WEIGHT

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_acc"]
        for i, (l, a, v) in enumerate(zip(self.train_loss, self.train_acc, self.val_acc), 1):
            lines.append(f"{i},{l!r},{a!r},{v!r}")
        return "\n".join(lines) + "\n"


def _image_shape(model: Model):
    c, h, w = model.spec.input_shape
    return h, w, c


def train(model: Model, train_split: CorpusIndex, val_split: CorpusIndex, config: TrainConfig):
    """Minibatch SGD with momentum; keeps the parameters of the best validation epoch.

    Batch order of epoch ``e`` comes from ``derive_seed(config.seed, e)``.
    Raises DivergedLoss as soon as a batch loss is not finite.
    """
    if len(train_split) == 0 or len(val_split) == 0:
        raise ValueError("train and validation splits must be non-empty")
    h, w, c = _image_shape(model)
    velocity = None
    history = TrainHistory()
    best_acc, best_state, since_best = -1.0, None, 0

    for epoch in range(1, config.epochs + 1):
        total_loss, correct, seen = 0.0, 0, 0
        batches = batch_iter(train_split, config.batch_size, derive_seed(config.seed, epoch), h, w, c)
        for b, (x, y) in enumerate(batches, 1):
            model.zero_grad()
            loss, scores = model.loss_and_backward(x, y, config.aux_weight)
            if not math.isfinite(loss):
                raise DivergedLoss(epoch, b, loss)
            velocity = sgd_momentum_update(model.params(), model.grads(), config.learning_rate, config.momentum, velocity)
            total_loss += loss * len(y)
            correct += int((scores.argmax(axis=1) == y).sum())
            seen += len(y)
        val_acc = evaluate(model, val_split).overall_accuracy
        history.train_loss.append(total_loss / seen)
        history.train_acc.append(correct / seen)
        history.val_acc.append(val_acc)
        log.info("epoch %d loss %.6f train_acc %.4f val_acc %.4f", epoch, total_loss / seen, correct / seen, val_acc)
        if val_acc > best_acc:
            best_acc, best_state, since_best = val_acc, model.state_dict(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if config.patience is not None and since_best >= config.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    return model, history


@dataclass
class EvalReport:
    confusion: np.ndarray
    families: tuple
    model_id: str = "model"
    split_id: str = "test"

    @property
    def row_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def per_family_accuracy(self) -> np.ndarray:
        """Per-class recall: diagonal over row sum (0 for families with no samples)."""
        rows = self.row_counts
        diag = np.diag(self.confusion).astype(np.float64)
        return np.divide(diag, rows, out=np.zeros_like(diag), where=rows > 0)

    @property
    def overall_accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def macro_average(self) -> float:
        present = self.row_counts > 0
        return float(self.per_family_accuracy[present].mean()) if present.any() else 0.0


def confusion_matrix(true, predicted, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    return cm


def evaluate(model: Model, split: CorpusIndex, model_id: str | None = None, split_id: str = "test",
             batch_size: int = 64) -> EvalReport:
    """Argmax prediction for every sample (ties to the lowest class id)."""
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    h, w, c = _image_shape(model)
    preds, labels = [], []
    for x, y in batch_iter(split, batch_size, None, h, w, c):
        preds.append(model.predict(x))
        labels.append(y)
    cm = confusion_matrix(np.concatenate(labels), np.concatenate(preds), len(split.families))
    return EvalReport(cm, tuple(split.families), model_id or model.spec.architecture, split_id)


def compare_models(reports) -> list[tuple[str, float]]:
    """(model id, overall accuracy) rows, ascending by accuracy; ties keep input order.

    Accepts EvalReports or ready-made (model id, accuracy) pairs.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    rows = [(r.model_id, r.overall_accuracy) if isinstance(r, EvalReport) else (r[0], float(r[1])) for r in reports]
    return sorted(rows, key=lambda row: row[1])


def format_percent(value: float) -> str:
    return f"{value * 100:.2f}%"


def _table_order(families):
    """Families in the order of the published Malimg table, unknown names appended alphabetically."""
    published = []
    for name, _, _ in MALIMG_TABLE:
        published.append(name.lower())
        published.append(MALIMG_DIR_ALIASES.get(name, name).lower())
    rank = {n: i // 2 for i, n in enumerate(published)}
    return sorted(families, key=lambda f: (rank.get(f.lower(), len(MALIMG_TABLE)), f))


def report_rows(report: EvalReport) -> list[tuple[str, float]]:
    acc = dict(zip(report.families, report.per_family_accuracy))
    counts = dict(zip(report.families, report.row_counts))
    return [(f, acc[f]) for f in _table_order(report.families) if counts[f] > 0]


def render_report(obj, fmt: str = "csv") -> str:
    if isinstance(obj, EvalReport):
        rows = report_rows(obj) + [("OVERALL", obj.overall_accuracy)]
        key, title = "family", "Accuracy (per-family recall)"
    else:
        rows = list(obj)
        key, title = "model", "Accuracy"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([key, "accuracy"])
        for name, value in rows:
            writer.writerow([name, format_percent(value)])
        return buf.getvalue()
    if fmt in ("markdown", "md"):
        lines = [f"| {key.capitalize()} | {title} |", "|---|---:|"]
        for name, value in rows:
            cell = f"**{format_percent(value)}**" if name == "OVERALL" else format_percent(value)
            lines.append(f"| {name} | {cell} |")
        if isinstance(obj, EvalReport):
            lines.append("")
            lines.append(f"model: {obj.model_id}; split: {obj.split_id}; samples: {obj.total}; "
                         f"macro average: {format_percent(obj.macro_average)}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(obj, fmt: str, destination) -> int:
    """Write a report (EvalReport) or comparison (compare_models rows); returns bytes written."""
    payload = render_report(obj, fmt).encode("utf-8")
    if hasattr(destination, "write"):
        destination.write(payload)
        return len(payload)
    if destination is None or os.fspath(destination) == "":
        raise IoFailure("empty destination path")
    try:
        with open(destination, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return len(payload)


def confusion_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\predicted", *report.families])
    for fam, row in zip(report.families, report.confusion):
        w.writerow([fam, *row.tolist()])
    return buf.getvalue()


def parse_report_csv(text: str, model_id: str) -> float:
    """Overall accuracy (as a fraction) from a CSV written by :func:`emit_report`."""
    for row in csv.reader(io.StringIO(text)):
        if row and row[0] == "OVERALL":
            return float(row[1].rstrip("%")) / 100.0
    raise ValueError(f"report for {model_id} has no OVERALL row")
