"""ROC AUC (exact, tie-aware), ROC curves and multi-seed evaluation reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import MetricError


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise MetricError(f"{s.size} scores but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be 0/1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise MetricError("ROC AUC needs at least one positive and one negative")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    return s, y


def _twice_midranks(values: np.ndarray) -> np.ndarray:
    """Twice the 1-based midranks, as exact integers."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [values.size]))
    ranks = np.empty(values.size, dtype=np.int64)
    ranks[order] = np.repeat(starts + ends + 1, ends - starts)
    return ranks


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    return _twice_midranks(np.asarray(values)) / 2.0


def auc_fraction(scores, labels) -> Fraction:
    """The Mann-Whitney statistic as an exact rational."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    twice_u = int(_twice_midranks(s)[y].sum()) - n_pos * (n_pos + 1)
    return Fraction(twice_u, 2 * n_pos * n_neg)


def roc_auc(scores, labels) -> float:
    """P(pos > neg) + 0.5 P(pos == neg), computed from rank sums.

    The result is the correctly rounded float of :func:`auc_fraction`.
    """
    return float(auc_fraction(scores, labels))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def rows(self):
        return zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist())


def roc_curve(scores, labels) -> RocCurve:
    """Operating points for every distinct threshold, highest first.

    The first point is ``(0, 0)`` at threshold ``+inf``; a sample counts as
    positive when its score is ``>=`` the threshold.
    """
    s, y = _check(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s_sorted)), s.size - 1]
    tps = np.cumsum(y_sorted)[last_of_run]
    fps = (last_of_run + 1) - tps
    n_pos, n_neg = tps[-1], fps[-1]
    return RocCurve(
        fpr=np.r_[0.0, fps / n_neg],
        tpr=np.r_[0.0, tps / n_pos],
        thresholds=np.r_[np.inf, s_sorted[last_of_run]],
    )


@dataclass
class EvalReport:
    seeds: list
    aucs: list
    roc: RocCurve | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def std(self) -> float:
        # population std over the listed seeds
        return float(np.std(self.aucs))

    def summary(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"

    def to_json(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "aucs": [float(a) for a in self.aucs],
            "mean": self.mean,
            "std": self.std,
            "std_kind": "population",
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(list(d["seeds"]), list(d["aucs"]), None, dict(d.get("metadata", {})))

    def save(self, path, roc_csv=None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        if roc_csv is not None and self.roc is not None:
            write_roc_csv(roc_csv, self.roc)


def write_roc_csv(path, roc: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in roc.rows():
            w.writerow([repr(f), repr(t), repr(th)])


def seeded_eval(score_fn: Callable[[np.ndarray], np.ndarray], dataset, seeds: Sequence[int],
                metadata: dict | None = None) -> EvalReport:
    """Re-extract test patches under each seed, score them and compute AUC.

    ``dataset`` needs ``extract_all(rng) -> (inputs, labels)``; randomness
    enters only through the placement of unannotated patches.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    if len(dataset) == 0:
        raise MetricError("empty test set")
    aucs, roc = [], None
    for seed in seeds:
        x, y = dataset.extract_all(np.random.default_rng(seed))
        scores = score_fn(x)
        aucs.append(roc_auc(scores, y))
        if roc is None:
            roc = roc_curve(scores, y)
    return EvalReport(list(seeds), aucs, roc, dict(metadata or {}))
