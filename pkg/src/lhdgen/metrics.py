"""Binary human-segmentation scores, human as the positive class."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

ROW_NAMES = ("Avg. Acc", "Precision", "Recall", "Threat score")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricReport:
    avg_acc: float
    precision: float
    recall: float
    threat: float
    undefined: tuple[str, ...] = ()  # ratios that were 0/0 and reported as 0

    def rows(self) -> list[tuple[str, float]]:
        return list(zip(ROW_NAMES, (self.avg_acc, self.precision, self.recall, self.threat)))


def _binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype == bool:
        return a
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return a.astype(bool)


def confusion(pred, truth, ignore_holes: bool = False, depth=None) -> ConfusionCounts:
    """Pixel tally of ``pred`` against ``truth``.

    With ``ignore_holes`` the pixels where ``depth`` is 0 are left out;
    otherwise they count like any other pixel (their truth label is 0).
    """
    p = _binary(pred, "pred")
    t = _binary(truth, "truth")
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    if ignore_holes:
        if depth is None:
            raise ValueError("ignore_holes needs the depth map")
        depth = np.asarray(depth)
        if depth.shape != t.shape:
            raise ValueError(f"depth shape {depth.shape} does not match labels {t.shape}")
        keep = depth > 0
        p, t = p[keep], t[keep]
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, fn, tn)


def compute_metrics(c: ConfusionCounts) -> MetricReport:
    if c.total == 0:
        raise ValueError("empty confusion: no pixels evaluated")
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    bg_acc = ratio(c.tn, c.tn + c.fp, "background_accuracy")
    recall = ratio(c.tp, c.tp + c.fn, "recall")
    precision = ratio(c.tp, c.tp + c.fp, "precision")
    threat = ratio(c.tp, c.tp + c.fp + c.fn, "threat")
    return MetricReport((bg_acc + recall) / 2.0, precision, recall, threat, tuple(undefined))


def evaluate(preds: Iterable, truths: Iterable, depths: Iterable | None = None,
             ignore_holes: bool = False, mode: str = "micro") -> MetricReport:
    """Score a batch. ``micro`` pools pixels across samples; ``macro`` averages per-sample metrics."""
    if mode not in ("micro", "macro"):
        raise ValueError("mode must be 'micro' or 'macro'")
    preds, truths = list(preds), list(truths)
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} ground-truth maps")
    depths = list(depths) if depths is not None else [None] * len(preds)
    counts = [confusion(p, t, ignore_holes, d) for p, t, d in zip(preds, truths, depths)]
    if mode == "micro":
        return compute_metrics(sum(counts, ConfusionCounts()))
    reports = [compute_metrics(c) for c in counts]
    if not reports:
        raise ValueError("empty batch")
    mean = [float(np.mean([getattr(r, k) for r in reports])) for k in ("avg_acc", "precision", "recall", "threat")]
    flags = tuple(sorted({u for r in reports for u in r.undefined}))
    return MetricReport(*mean, undefined=flags)


def format_report(report: MetricReport, title: str | None = None) -> str:
    width = max(len(n) for n in ROW_NAMES)
    lines = [title] if title else []
    lines += [f"{name:<{width}}  {value:.4f}" for name, value in report.rows()]
    if report.undefined:
        lines.append(f"(0/0 reported as 0: {', '.join(report.undefined)})")
    return "\n".join(lines)
