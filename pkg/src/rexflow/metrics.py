"""Precision/recall/F1 with per-dataset label policies, and the detection view.

Conventions: a precision or recall with a zero denominator is 0, F1 is 0 when
P + R = 0, and macro-F1 is the unweighted mean of per-class F1 scores.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import RelationSchema
from .errors import DataError

POSITIVE = "pos"
NEGATIVE = "neg"
TASKS = ("classification", "detection")
AGGREGATES = ("accuracy", "micro_p", "micro_r", "micro_f1", "macro_p", "macro_r", "macro_f1")


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int
    tp: int
    fp: int
    fn: int


@dataclass
class MetricsReport:
    task: str
    labels: tuple[str, ...]
    included: tuple[str, ...]
    per_class: dict[str, ClassScores]
    confusion: np.ndarray
    accuracy: float
    micro_p: float
    micro_r: float
    micro_f1: float
    macro_p: float
    macro_r: float
    macro_f1: float
    n: int = 0

    def official(self, averaging: str) -> float:
        return self.macro_f1 if averaging == "macro" else self.micro_f1

    def aggregates(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in AGGREGATES}

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "labels": list(self.labels),
            "included": list(self.included),
            "n": self.n,
            **self.aggregates(),
            "per_class": {k: vars(v) for k, v in self.per_class.items()},
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            task=d["task"], labels=tuple(d["labels"]), included=tuple(d["included"]),
            per_class={k: ClassScores(**v) for k, v in d["per_class"].items()},
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            n=d.get("n", 0), **{k: d[k] for k in AGGREGATES},
        )

    def format_table(self) -> str:
        lines = [f"task: {self.task}   n={self.n}", f"{'label':<28}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}"]
        for lab in self.included:
            c = self.per_class[lab]
            lines.append(f"{lab:<28}{100 * c.precision:8.2f}{100 * c.recall:8.2f}{100 * c.f1:8.2f}{c.support:9d}")
        lines.append("")
        lines.append(f"accuracy {100 * self.accuracy:.2f}")
        lines.append(f"micro  P {100 * self.micro_p:.2f}  R {100 * self.micro_r:.2f}  F1 {100 * self.micro_f1:.2f}")
        lines.append(f"macro  P {100 * self.macro_p:.2f}  R {100 * self.macro_r:.2f}  F1 {100 * self.macro_f1:.2f}")
        return "\n".join(lines)


def detection_collapse(labels: Sequence[str], null_label: str) -> list[str]:
    return [NEGATIVE if x == null_label else POSITIVE for x in labels]


def confusion_matrix(gold: Sequence[str], pred: Sequence[str], labels: Sequence[str]) -> np.ndarray:
    index = {l: i for i, l in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for g, p in zip(gold, pred):
        cm[index[g], index[p]] += 1
    return cm


def report_from_confusion(cm: np.ndarray, labels: Sequence[str], included: Sequence[str], task: str) -> MetricsReport:
    """Scores for the ``included`` labels from a gold-by-predicted count matrix."""
    labels = tuple(labels)
    index = {l: i for i, l in enumerate(labels)}
    per_class = {}
    TP = FP = FN = 0
    for lab in included:
        i = index[lab]
        tp = int(cm[i, i])
        fp = int(cm[:, i].sum()) - tp
        fn = int(cm[i, :].sum()) - tp
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        per_class[lab] = ClassScores(p, r, _f1(p, r), tp + fn, tp, fp, fn)
        TP, FP, FN = TP + tp, FP + fp, FN + fn
    micro_p, micro_r = _ratio(TP, TP + FP), _ratio(TP, TP + FN)
    k = len(included)
    n = int(cm.sum())
    return MetricsReport(
        task=task, labels=labels, included=tuple(included), per_class=per_class, confusion=cm,
        accuracy=_ratio(int(np.trace(cm)), n),
        micro_p=micro_p, micro_r=micro_r, micro_f1=_f1(micro_p, micro_r),
        macro_p=_ratio(sum(c.precision for c in per_class.values()), k),
        macro_r=_ratio(sum(c.recall for c in per_class.values()), k),
        macro_f1=_ratio(sum(c.f1 for c in per_class.values()), k),
        n=n,
    )


def evaluate(gold: Sequence[str], pred: Sequence[str], schema: RelationSchema, task: str = "classification") -> MetricsReport:
    if len(gold) != len(pred):
        raise DataError(f"gold has {len(gold)} labels but pred has {len(pred)}")
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    known = set(schema.labels)
    for seq, name in ((gold, "gold"), (pred, "pred")):
        bad = sorted({x for x in seq if x not in known})
        if bad:
            raise DataError(f"{name} contains labels outside the schema: {bad}")
    if task == "detection":
        if not schema.detection_enabled:
            raise DataError(f"detection is not evaluated for schema {schema.name!r}")
        labels = (POSITIVE, NEGATIVE)
        g = detection_collapse(gold, schema.null_label)
        p = detection_collapse(pred, schema.null_label)
        return report_from_confusion(confusion_matrix(g, p, labels), labels, labels, task)
    cm = confusion_matrix(gold, pred, schema.labels)
    return report_from_confusion(cm, schema.labels, schema.metric_included, task)


def detection_from_report(report: MetricsReport, null_label: str) -> MetricsReport:
    """Detection scores computed from a classification confusion matrix alone."""
    if report.task != "classification":
        raise DataError("detection is derived from a classification report")
    is_null = np.array([l == null_label for l in report.labels])
    cm = report.confusion
    collapsed = np.array([
        [cm[~is_null][:, ~is_null].sum(), cm[~is_null][:, is_null].sum()],
        [cm[is_null][:, ~is_null].sum(), cm[is_null][:, is_null].sum()],
    ], dtype=np.int64)
    labels = (POSITIVE, NEGATIVE)
    return report_from_confusion(collapsed, labels, labels, "detection")


def compare_reports(a: MetricsReport, b: MetricsReport, schema: Optional[RelationSchema] = None) -> dict[str, float]:
    """Signed change ``b - a`` of every aggregate and per-class F1."""
    if a.task != b.task or a.included != b.included or a.labels != b.labels:
        raise DataError("reports were computed under different schemas or tasks")
    if schema is not None and a.task == "classification" and a.labels != schema.labels:
        raise DataError(f"reports do not belong to schema {schema.name!r}")
    delta = {k: getattr(b, k) - getattr(a, k) for k in AGGREGATES}
    for lab in a.included:
        delta[f"f1[{lab}]"] = b.per_class[lab].f1 - a.per_class[lab].f1
    return delta


def read_predictions(path: str | Path) -> tuple[list[str], list[str], list[str]]:
    ids, gold, pred = [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["id", "gold", "pred"]:
            raise DataError(f"{path}: expected header id,gold,pred")
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}: malformed row {row_no}")
            ids.append(row[0])
            gold.append(row[1])
            pred.append(row[2])
    return ids, gold, pred


def write_predictions(path: str | Path, ids: Sequence[str], gold: Sequence[str], pred: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id", "gold", "pred"])
        w.writerows(zip(ids, gold, pred))


def write_report_json(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
