"""Evaluation metrics: top-1 accuracy, macro mAP, macro F1, seed aggregation.

Average precision per class ranks all samples by that class's score
(descending, stable: ties keep original order) and averages the precision
at each positive hit; classes with no positives are excluded from the macro
mean and reported. Scores are probability rows (each sums to 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PredictionSet:
    scores: np.ndarray  # [N, C] float64 probabilities, rows sum to 1
    labels: np.ndarray  # [N] int

    def validate(self) -> None:
        s, y = self.scores, self.labels
        if s.ndim != 2 or y.ndim != 1 or s.shape[0] != y.shape[0]:
            raise ValueError(f"scores {s.shape} vs labels {y.shape}")
        if s.shape[0] == 0:
            raise ValueError("empty prediction set")
        if not np.isfinite(s).all():
            raise ValueError("non-finite scores")
        sums = s.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-5:
            raise ValueError(f"score rows must sum to 1 (worst |err| {np.abs(sums - 1.0).max():.2e})")
        if y.min() < 0 or y.max() >= s.shape[1]:
            raise ValueError(f"labels outside [0, {s.shape[1]})")

    @property
    def num_classes(self) -> int:
        return int(self.scores.shape[1])


def top1_accuracy(pred: PredictionSet) -> float:
    """Fraction of samples whose argmax (ties -> lowest class index) is the label."""
    pred.validate()
    return float(np.mean(np.argmax(pred.scores, axis=1) == pred.labels))


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """AP for one class: mean precision at each positive, in stable descending score order."""
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    n_pos = int(hits.sum())
    if n_pos == 0:
        raise ValueError("average_precision needs at least one positive")
    ranks = np.arange(1, len(scores) + 1)
    precision = np.cumsum(hits) / ranks
    return float(precision[hits].sum() / n_pos)


def macro_map(pred: PredictionSet) -> tuple[float, list[int]]:
    """(macro mean AP over classes with positives, list of excluded class ids)."""
    pred.validate()
    aps = []
    excluded = []
    for c in range(pred.num_classes):
        pos = pred.labels == c
        if not pos.any():
            excluded.append(c)
            continue
        aps.append(average_precision(pred.scores[:, c], pos))
    if not aps:
        raise ValueError("no class has positives; mAP undefined")
    return float(np.mean(aps)), excluded


def macro_f1(pred: PredictionSet) -> float:
    """Macro F1 over classes present in labels or argmax predictions; 0/0 counts as 0."""
    pred.validate()
    preds = np.argmax(pred.scores, axis=1)
    classes = sorted(set(pred.labels.tolist()) | set(preds.tolist()))
    f1s = []
    for c in classes:
        tp = int(np.sum((preds == c) & (pred.labels == c)))
        fp = int(np.sum((preds == c) & (pred.labels != c)))
        fn = int(np.sum((preds != c) & (pred.labels == c)))
        denom = 2 * tp + fp + fn
        f1s.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(f1s))


def restrict_to_classes(pred: PredictionSet, classes: list[int]) -> tuple[PredictionSet, list[int]]:
    """Keep only the given score columns, renormalize rows, remap labels.

    Returns the restricted set and the kept class ids (for reporting). With
    all classes kept and rows already normalized this is the identity.
    """
    pred.validate()
    classes = sorted(set(classes))
    if any(c < 0 or c >= pred.num_classes for c in classes):
        raise ValueError(f"restriction classes {classes} outside [0, {pred.num_classes})")
    if not set(pred.labels.tolist()) <= set(classes):
        raise ValueError("labels fall outside the restriction set")
    sub = pred.scores[:, classes].astype(np.float64)
    sums = sub.sum(axis=1, keepdims=True)
    uniform = np.full_like(sub, 1.0 / len(classes))
    sub = np.where(sums > 1e-300, sub / np.maximum(sums, 1e-300), uniform)
    remap = {c: i for i, c in enumerate(classes)}
    labels = np.array([remap[int(y)] for y in pred.labels], dtype=np.int64)
    return PredictionSet(scores=sub, labels=labels), classes


@dataclass
class ClassReport:
    class_id: int
    name: str
    support: int
    ap: float | None  # None when the class has no positives (excluded from mAP)
    f1: float


@dataclass
class SplitReport:
    """Metrics of one model on one evaluation split."""

    top1: float
    macro_map: float
    macro_f1: float
    excluded_classes: list[int] = field(default_factory=list)
    per_class: list[ClassReport] = field(default_factory=list)

    def headline(self) -> dict[str, float]:
        return {"top1": self.top1, "macro_map": self.macro_map, "macro_f1": self.macro_f1}


def evaluate_predictions(
    pred: PredictionSet,
    class_names: list[str] | None = None,
    restrict: bool = True,
) -> SplitReport:
    """Full report; restrict=True scores only over classes present in the labels."""
    pred.validate()
    names = class_names or [f"class_{c}" for c in range(pred.num_classes)]
    kept = list(range(pred.num_classes))
    if restrict:
        present = sorted(set(pred.labels.tolist()))
        pred, kept = restrict_to_classes(pred, present)
        names = [names[c] for c in kept]
    mmap, excluded_local = macro_map(pred)
    preds = np.argmax(pred.scores, axis=1)
    per_class = []
    for i in range(pred.num_classes):
        pos = pred.labels == i
        support = int(pos.sum())
        ap = None if support == 0 else average_precision(pred.scores[:, i], pos)
        tp = int(np.sum((preds == i) & pos))
        denom = 2 * tp + int(np.sum((preds == i) & ~pos)) + int(np.sum((preds != i) & pos))
        f1 = 0.0 if denom == 0 else 2 * tp / denom
        per_class.append(ClassReport(class_id=kept[i], name=names[i], support=support, ap=ap, f1=f1))
    return SplitReport(
        top1=top1_accuracy(pred),
        macro_map=mmap,
        macro_f1=macro_f1(pred),
        excluded_classes=[kept[i] for i in excluded_local],
        per_class=per_class,
    )


@dataclass
class MetricSummary:
    mean: float
    std: float  # sample std (ddof=1); 0.0 when n == 1
    n: int


@dataclass
class EvalReport:
    metrics: dict[str, MetricSummary]
    notes: list[str] = field(default_factory=list)


def aggregate_seeds(per_seed: list[dict[str, float]]) -> EvalReport:
    """Mean and sample standard deviation of each metric across seed runs."""
    if not per_seed:
        raise ValueError("no seed results to aggregate")
    keys = list(per_seed[0].keys())
    for r in per_seed[1:]:
        if list(r.keys()) != keys:
            raise ValueError("seed results report different metrics")
    out: dict[str, MetricSummary] = {}
    n = len(per_seed)
    for k in keys:
        vals = np.array([r[k] for r in per_seed], dtype=np.float64)
        std = 0.0 if n == 1 else float(np.std(vals, ddof=1))
        out[k] = MetricSummary(mean=float(vals.mean()), std=std, n=n)
    notes = ["single seed: std not estimable, reported as 0"] if n == 1 else []
    return EvalReport(metrics=out, notes=notes)


def format_report(title: str, report: EvalReport, per_seed_details: list[SplitReport] | None = None) -> str:
    lines = [title, "=" * len(title)]
    for k, m in report.metrics.items():
        lines.append(f"{k:12s} {m.mean:.4f} +/- {m.std:.4f}  (n={m.n})")
    for note in report.notes:
        lines.append(f"note: {note}")
    if per_seed_details:
        detail = per_seed_details[0]
        if detail.per_class:
            lines.append("")
            lines.append("per-class (first seed)")
            for c in detail.per_class:
                ap = "excluded" if c.ap is None else f"{c.ap:.4f}"
                lines.append(f"  [{c.class_id:3d}] {c.name:24s} support={c.support:4d} ap={ap} f1={c.f1:.4f}")
        if detail.excluded_classes:
            lines.append(f"  classes with no positives: {detail.excluded_classes}")
    return "\n".join(lines) + "\n"
