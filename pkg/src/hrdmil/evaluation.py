"""Threshold rules and metrics for judging a continuous-score regressor."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    AllExcludedError,
    ConfigError,
    LengthMismatchError,
    MissingCellError,
    SingleClassError,
    ZeroVarianceError,
)
from .upsampling import BinLayout, bin_index

CLINICAL_THRESHOLD = 42.0


@dataclass(frozen=True)
class ThresholdRule:
    """``kind`` is ``fixed`` (uses ``t``), ``median``, or ``tertiles`` (uses ``lo``/``hi``)."""

    kind: str
    t: Optional[float] = None
    lo: Optional[float] = None
    hi: Optional[float] = None

    def __post_init__(self):
        if self.kind == "fixed":
            if self.t is None or not math.isfinite(self.t):
                raise ConfigError("fixed threshold needs a finite value")
        elif self.kind == "tertiles":
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise ConfigError("tertile rule needs lo < hi")
        elif self.kind != "median":
            raise ConfigError(f"unknown threshold rule {self.kind!r}")

    @classmethod
    def fixed(cls, t: float) -> "ThresholdRule":
        return cls("fixed", t=float(t))

    @classmethod
    def median(cls) -> "ThresholdRule":
        return cls("median")

    @classmethod
    def tertiles(cls, lo: float, hi: float) -> "ThresholdRule":
        return cls("tertiles", lo=float(lo), hi=float(hi))

    @classmethod
    def parse(cls, text: str) -> "ThresholdRule":
        """Parse ``fixed:<t>``, ``median`` or ``tertiles:<lo>,<hi>``."""
        head, _, rest = text.strip().partition(":")
        try:
            if head == "fixed":
                return cls.fixed(float(rest))
            if head == "median" and not rest:
                return cls.median()
            if head == "tertiles":
                lo, hi = rest.split(",")
                return cls.tertiles(float(lo), float(hi))
        except ValueError:
            pass
        raise ConfigError(f"cannot parse threshold rule {text!r}")

    def __str__(self):
        if self.kind == "fixed":
            return f"fixed:{self.t:g}"
        if self.kind == "tertiles":
            return f"tertiles:{self.lo:g},{self.hi:g}"
        return "median"

    def cutpoints(self, true_scores) -> dict:
        """Thresholds realised on a particular evaluation set."""
        if self.kind == "fixed":
            return {"t": self.t}
        if self.kind == "median":
            return {"t": float(np.median(np.asarray(true_scores, dtype=np.float64)))}
        return {"lo": self.lo, "hi": self.hi}


def binarize(scores, rule: ThresholdRule, reference=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(labels, keep)``; ``labels[i]`` is True for the positive class.

    The median rule takes its cutpoint from ``reference`` (true scores of the
    evaluation set), defaulting to ``scores`` themselves. ``keep`` is False
    only for true scores in the excluded middle band of the tertile rule.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if rule.kind == "tertiles":
        keep = (s > rule.hi) | (s < rule.lo)
        if not keep.any():
            raise AllExcludedError("every score falls in the excluded middle tertile")
        return s > rule.hi, keep
    t = rule.cutpoints(s if reference is None else reference)["t"]
    return s > t, np.ones(len(s), dtype=bool)


def binarize_predictions(preds, rule: ThresholdRule, true_scores) -> np.ndarray:
    """Predicted labels under the same rule; for tertiles a prediction is positive iff above ``hi``."""
    p = np.asarray(preds, dtype=np.float64)
    if rule.kind == "tertiles":
        return p > rule.hi
    return p > rule.cutpoints(true_scores)["t"]


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; ties between classes count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise LengthMismatchError(f"{s.shape} scores vs {y.shape} labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUROC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _confusion(pred, true):
    pred = np.asarray(pred, dtype=bool)
    true = np.asarray(true, dtype=bool)
    if pred.shape != true.shape:
        raise LengthMismatchError(f"{pred.shape} predictions vs {true.shape} labels")
    tp = int((pred & true).sum())
    fn = int((~pred & true).sum())
    tn = int((~pred & ~true).sum())
    fp = int((pred & ~true).sum())
    return tp, fn, tn, fp


def confusion_counts(pred_labels, true_labels) -> dict:
    tp, fn, tn, fp = _confusion(pred_labels, true_labels)
    return {"tp": tp, "fn": fn, "tn": tn, "fp": fp}


def balanced_accuracy(pred_labels, true_labels) -> float:
    tp, fn, tn, fp = _confusion(pred_labels, true_labels)
    if tp + fn == 0 or tn + fp == 0:
        raise SingleClassError("balanced accuracy needs both true classes")
    return 0.5 * (tp / (tp + fn) + tn / (tn + fp))


def recall_pos(pred_labels, true_labels) -> float:
    tp, fn, _, _ = _confusion(pred_labels, true_labels)
    if tp + fn == 0:
        raise SingleClassError("recall needs at least one true positive case")
    return tp / (tp + fn)


def rmse(preds, targets) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatchError(f"{p.shape} predictions vs {t.shape} targets")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def binned_rmse(preds, targets, layout) -> tuple[list[Optional[float]], list[int]]:
    """Per-bin RMSE grouped by the true target's bin; empty bins give ``None``.

    ``layout`` is a :class:`BinLayout` or an array of bin edges.
    """
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatchError(f"{p.shape} predictions vs {t.shape} targets")
    edges = layout.edges if isinstance(layout, BinLayout) else np.asarray(layout, dtype=np.float64)
    idx = bin_index(edges, t)
    out, counts = [], []
    for b in range(len(edges) - 1):
        sel = idx == b
        counts.append(int(sel.sum()))
        out.append(float(np.sqrt(np.mean((p[sel] - t[sel]) ** 2))) if sel.any() else None)
    return out, counts


def rank_models(table: Mapping[str, Sequence[Optional[float]]], higher_is_better: bool = True) -> dict[str, float]:
    """Mean per-fold rank of each model (1 = best, ties share the average rank)."""
    models = list(table)
    if not models:
        return {}
    n_folds = {len(v) for v in table.values()}
    if len(n_folds) != 1:
        raise MissingCellError("models were evaluated on different numbers of folds")
    m = np.array([[np.nan if x is None else float(x) for x in table[k]] for k in models])
    if np.isnan(m).any():
        raise MissingCellError("metric table has missing cells")
    ranks = np.empty_like(m)
    for f in range(m.shape[1]):
        col = -m[:, f] if higher_is_better else m[:, f]
        ranks[:, f] = rankdata(col, method="average")
    return {k: float(ranks[i].mean()) for i, k in enumerate(models)}


def pearson_corr(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise LengthMismatchError("pearson_corr needs two equal-length vectors of >= 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ZeroVarianceError("correlation undefined for a constant vector")
    return float(dx @ dy / math.sqrt(sxx * syy))


# ---------------------------------------------------------------------------
# reports


def _safe(fn, *args):
    try:
        return fn(*args)
    except (SingleClassError, AllExcludedError):
        return None


def evaluate_predictions(fold_ids, y_true, y_hat, rule: ThresholdRule, layout_edges=None) -> dict:
    """Metrics for CV predictions: per-fold AUROC and pooled classification / error metrics.

    Cutpoints are realised per fold (for AUROC) and on the pooled set (for the
    pooled metrics); both are echoed.
    """
    fold_ids = np.asarray(fold_ids)
    y_true = np.asarray(y_true, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if not (len(fold_ids) == len(y_true) == len(y_hat)):
        raise LengthMismatchError("fold ids, targets and predictions differ in length")
    per_fold = []
    for f in sorted(set(fold_ids.tolist())):
        sel = fold_ids == f
        yt, yh = y_true[sel], y_hat[sel]
        try:
            labels, keep = binarize(yt, rule)
            score = _safe(auroc, yh[keep], labels[keep])
        except AllExcludedError:
            score, keep = None, np.zeros(len(yt), dtype=bool)
        per_fold.append({"fold": int(f), "n": int(sel.sum()), "n_kept": int(keep.sum()),
                         "cutpoints": rule.cutpoints(yt), "auroc": score})
    aurocs = [r["auroc"] for r in per_fold if r["auroc"] is not None]

    labels, keep = binarize(y_true, rule)
    pred_labels = binarize_predictions(y_hat, rule, y_true)
    tl, pl = labels[keep], pred_labels[keep]
    counts = confusion_counts(pl, tl)
    report = {
        "threshold": str(rule),
        "cutpoints": rule.cutpoints(y_true),
        "n": int(len(y_true)),
        "n_excluded": int((~keep).sum()),
        "class_counts": {"positive": int(tl.sum()), "negative": int((~tl).sum())},
        "confusion": counts,
        "per_fold": per_fold,
        "auroc_median": float(np.median(aurocs)) if aurocs else None,
        "auroc_pooled": _safe(auroc, y_hat[keep], tl),
        "balanced_accuracy": _safe(balanced_accuracy, pl, tl),
        "recall_pos": _safe(recall_pos, pl, tl),
        "rmse": rmse(y_hat, y_true),
    }
    if layout_edges is not None:
        vals, cnts = binned_rmse(y_hat, y_true, layout_edges)
        report["binned_rmse"] = {"edges": [float(e) for e in layout_edges], "rmse": vals, "counts": cnts}
    return report


METRICS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["run", "config", "metrics"],
    "properties": {
        "run": {
            "type": "object",
            "required": ["library_version", "seeds", "inputs"],
        },
        "config": {"type": "object"},
        "metrics": {
            "type": "object",
            "required": ["threshold", "cutpoints", "n", "confusion", "per_fold", "auroc_median",
                         "balanced_accuracy", "recall_pos", "rmse", "class_counts"],
            "properties": {
                "threshold": {"type": "string"},
                "n": {"type": "integer", "minimum": 1},
                "auroc_median": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "auroc_pooled": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "balanced_accuracy": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "recall_pos": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "rmse": {"type": "number", "minimum": 0},
                "confusion": {
                    "type": "object",
                    "required": ["tp", "fn", "tn", "fp"],
                    "additionalProperties": {"type": "integer", "minimum": 0},
                },
                "per_fold": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["fold", "n", "auroc"],
                        "properties": {"auroc": {"type": ["number", "null"], "minimum": 0, "maximum": 1}},
                    },
                },
                "binned_rmse": {
                    "type": "object",
                    "required": ["edges", "rmse", "counts"],
                    "properties": {
                        "rmse": {"type": "array", "items": {"type": ["number", "null"], "minimum": 0}},
                        "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    },
                },
            },
        },
    },
}
