"""Evaluation: confusion counts, ROC/AUC, calibration, throughput benchmark."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import InputError

# Published timings for the systems this package reimplements at desk scale;
# embedded in benchmark output for context, never asserted against.
LITERATURE_REFERENCE = {
    "rule_based": {
        "seconds": 254.0,
        "reports": 1000,
        "hardware": "80 x 2.5 GHz CPU cores",
    },
    "bilstm": {"seconds": 239.0, "reports": 7486, "hardware": "8 V100 GPUs"},
    "note": "published reference timings on other hardware, for context only",
}


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(scores: Sequence[tuple[float, int]], threshold: float) -> Confusion:
    """Counts with the prediction rule score >= threshold."""
    if not scores:
        raise InputError("cannot build a confusion matrix from no scores")
    tp = fp = tn = fn = 0
    for score, gold in scores:
        if gold not in (0, 1):
            raise InputError(f"gold label must be 0 or 1, got {gold!r}")
        predicted = score >= threshold
        if gold == 1:
            tp, fn = tp + predicted, fn + (not predicted)
        else:
            fp, tn = fp + predicted, tn + (not predicted)
    return Confusion(tp=tp, fp=fp, tn=tn, fn=fn)


def sens_spec(c: Confusion) -> tuple[float, float]:
    if c.tp + c.fn == 0:
        raise InputError("sensitivity undefined: no abnormal (positive) examples")
    if c.tn + c.fp == 0:
        raise InputError("specificity undefined: no normal (negative) examples")
    return c.tp / (c.tp + c.fn), c.tn / (c.tn + c.fp)


@dataclass
class RocCurve:
    points: list[tuple[float, float, float]]  # (threshold, tpr, fpr)
    auc: float

    def to_csv(self) -> str:
        lines = ["threshold,tpr,fpr"]
        for threshold, tpr, fpr in self.points:
            lines.append(f"{threshold!r},{tpr!r},{fpr!r}")
        return "\n".join(lines) + "\n"


def roc(scores: Sequence[tuple[float, int]]) -> RocCurve:
    """Threshold sweep over distinct scores (descending), trapezoid AUC.

    Tied scores collapse into a single threshold; the curve starts at (0,0)
    via a sentinel threshold above every score and ends at (1,1).
    """
    n_pos = sum(1 for _, gold in scores if gold == 1)
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InputError("ROC needs at least one abnormal and one normal example")

    by_score: dict[float, list[int]] = {}
    for score, gold in scores:
        by_score.setdefault(float(score), []).append(gold)

    points: list[tuple[float, float, float]] = [(math.inf, 0.0, 0.0)]
    tp = fp = 0
    auc = 0.0
    prev_tpr = prev_fpr = 0.0
    for threshold in sorted(by_score, reverse=True):
        golds = by_score[threshold]
        tp += sum(golds)
        fp += len(golds) - sum(golds)
        tpr = tp / n_pos
        fpr = fp / n_neg
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        points.append((threshold, tpr, fpr))
        prev_tpr, prev_fpr = tpr, fpr
    return RocCurve(points=points, auc=auc)


def _interp_tpr_at_fpr(curve: RocCurve, fpr: float) -> float:
    """Piecewise-linear TPR at a given FPR (the trapezoid-consistent curve)."""
    points = curve.points
    best = 0.0
    for (_, tpr0, fpr0), (_, tpr1, fpr1) in zip(points, points[1:]):
        if fpr0 <= fpr <= fpr1:
            if fpr1 == fpr0:  # vertical segment: take its top
                best = max(best, tpr1)
            else:
                best = max(best, tpr0 + (tpr1 - tpr0) * (fpr - fpr0) / (fpr1 - fpr0))
    return best


def _interp_fpr_at_tpr(curve: RocCurve, tpr: float) -> float:
    """Smallest piecewise-linear FPR reaching a given TPR."""
    points = curve.points
    for (_, tpr0, fpr0), (_, tpr1, fpr1) in zip(points, points[1:]):
        if tpr0 <= tpr <= tpr1:
            if tpr1 == tpr0:
                return fpr0
            return fpr0 + (fpr1 - fpr0) * (tpr - tpr0) / (tpr1 - tpr0)
    return 1.0


def compare_operating_point(
    model_scores: Mapping[str, float],
    rule_labels: Mapping[str, int],
    gold: Mapping[str, int],
    eps: float = 1e-9,
) -> dict:
    """Place the rule labeler's single (sens, spec) point against the model ROC."""
    for name, keys in (("model_scores", model_scores), ("rule_labels", rule_labels)):
        missing = sorted(set(gold) - set(keys))
        extra = sorted(set(keys) - set(gold))
        if missing or extra:
            raise InputError(
                f"{name} ids do not align with gold: missing={missing[:10]} extra={extra[:10]}"
            )

    ids = sorted(gold)
    rule_conf = confusion([(float(rule_labels[i]), gold[i]) for i in ids], threshold=0.5)
    rule_sens, rule_spec = sens_spec(rule_conf)
    curve = roc([(model_scores[i], gold[i]) for i in ids])

    tpr_at_rule_fpr = _interp_tpr_at_fpr(curve, 1.0 - rule_spec)
    if rule_sens < tpr_at_rule_fpr - eps:
        placement = "below_curve"
    elif rule_sens <= tpr_at_rule_fpr + eps:
        placement = "on_curve"
    else:
        placement = "above_curve"
    return {
        "rule_point": {"sensitivity": rule_sens, "specificity": rule_spec},
        "model_auc": curve.auc,
        "model_sensitivity_at_rule_specificity": tpr_at_rule_fpr,
        "model_specificity_at_rule_sensitivity": 1.0 - _interp_fpr_at_tpr(curve, rule_sens),
        "rule_point_placement": placement,
        "roc_points": [
            {"threshold": t, "tpr": tpr, "fpr": fpr} for t, tpr, fpr in curve.points
        ],
    }


def calibration(
    scores: Sequence[tuple[float, int]], n_bins: int = 10
) -> dict:
    """Equal-width score bins with expected calibration error."""
    if n_bins < 1:
        raise InputError("n_bins must be >= 1")
    sums = [0.0] * n_bins
    hits = [0] * n_bins
    counts = [0] * n_bins
    for score, gold in scores:
        bin_index = min(int(score * n_bins), n_bins - 1)
        sums[bin_index] += score
        hits[bin_index] += gold
        counts[bin_index] += 1
    total = sum(counts)
    bins = []
    ece = 0.0
    for b in range(n_bins):
        if counts[b] == 0:
            bins.append({"mean_score": None, "empirical_rate": None, "count": 0})
            continue
        mean_score = sums[b] / counts[b]
        rate = hits[b] / counts[b]
        ece += (counts[b] / total) * abs(mean_score - rate)
        bins.append({"mean_score": mean_score, "empirical_rate": rate, "count": counts[b]})
    return {"bins": bins, "ece": ece, "n_bins": n_bins, "total": total}


def bench_throughput(
    label_fn: Callable[[], object],
    n_reports: int,
    repetitions: int,
    parallelism: int = 1,
) -> dict:
    """Time repeated full-corpus labeling passes, excluding one warm-up."""
    if n_reports < 1:
        raise InputError("benchmark corpus is empty")
    if repetitions < 3:
        raise InputError("benchmark needs at least 3 repetitions")
    label_fn()  # warm-up: imports, cache fills, JIT-ish effects
    timings = []
    for _ in range(repetitions):
        started = time.perf_counter()
        label_fn()
        timings.append(time.perf_counter() - started)
    mean_s = sum(timings) / len(timings)
    per_report_ms = [t / n_reports * 1000.0 for t in timings]
    mean_ms = sum(per_report_ms) / len(per_report_ms)
    stddev_ms = (
        sum((x - mean_ms) ** 2 for x in per_report_ms) / (len(per_report_ms) - 1)
    ) ** 0.5
    return {
        "reports": n_reports,
        "repetitions": repetitions,
        "warmup_excluded": True,
        "timings_seconds": timings,
        "reports_per_second": n_reports / mean_s,
        "mean_ms_per_report": mean_ms,
        "stddev_ms_per_report": stddev_ms,
        "environment": {"cpu_count": os.cpu_count(), "parallelism": parallelism},
        "literature_reference": LITERATURE_REFERENCE,
    }
