"""Classification metrics and their CSV forms."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


def predict(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(np.asarray(logits), axis=-1)


def fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class MetricsReport:
    top1: float
    per_class_recall: np.ndarray  # NaN for classes absent from the labels
    mean_acc: float
    confusion: np.ndarray  # rows: true class, cols: predicted
    count: int

    @classmethod
    def from_predictions(cls, labels, preds, n_classes: int) -> "MetricsReport":
        labels = np.asarray(labels, dtype=np.int64)
        preds = np.asarray(preds, dtype=np.int64)
        if labels.shape != preds.shape:
            raise ValueError("labels and predictions differ in length")
        if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValueError(f"labels outside [0, {n_classes})")
        conf = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(conf, (labels, preds), 1)
        support = conf.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            recall = np.where(support > 0, np.diag(conf) / np.maximum(support, 1), np.nan)
        n = int(len(labels))
        top1 = float(np.trace(conf) / n) if n else float("nan")
        present = recall[~np.isnan(recall)]
        mean_acc = float(present.mean()) if len(present) else float("nan")
        return cls(top1, recall, mean_acc, conf, n)

    @classmethod
    def from_logits(cls, logits, labels, n_classes: int) -> "MetricsReport":
        return cls.from_predictions(labels, predict(logits), n_classes)

    def row(self) -> dict:
        d = {"n": str(self.count), "top1": fmt(self.top1), "mean_acc": fmt(self.mean_acc)}
        for k, r in enumerate(self.per_class_recall):
            d[f"recall_{k}"] = fmt(r)
        return d

    def metrics_csv(self) -> str:
        return rows_to_csv([self.row()])

    def confusion_csv(self, class_names=None) -> str:
        k = self.confusion.shape[0]
        names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + names)
        for i in range(k):
            w.writerow([names[i]] + [str(int(v)) for v in self.confusion[i]])
        return buf.getvalue()


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    fields = list(rows[0])
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", restval="")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
