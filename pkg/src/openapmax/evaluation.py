"""Open-set evaluation: one-vs-rest AUC, sensitivity and bootstrap intervals.

Also holds the prediction table format shared by the ``predict`` and
``eval`` commands.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data_model import KNOWN, OPEN_SET_ORDER, Category, DataError, Dataset

FORMAT_VERSION = 1
PREDICTION_COLUMNS = ("subject_id", "visit_id", "P_unknown", "P_AD", "P_CN", "dist_AD", "dist_CN", "decision")
DISTANCE_COLUMNS = ("dist_AD", "dist_CN", "label")


class UndefinedMetricError(ValueError):
    """The metric has no value on this sample (e.g. a class is absent)."""


@dataclass(frozen=True)
class BootstrapConfig:
    """Resampling protocol: ``trials`` draws of ``resample_n`` cases with replacement."""

    resample_n: int = 2500
    trials: int = 2000
    percentiles: tuple = (2.5, 97.5)
    max_redraw_factor: int = 10


DEFAULT_BOOTSTRAP = BootstrapConfig()


# --- point metrics --------------------------------------------------------------


def auc_ovr(scores, is_class) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 1/2.

    Parameters
    ----------
    scores : array_like
        Score for the class of interest, one per record.
    is_class : array_like of bool
        Whether each record belongs to that class.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(is_class, dtype=bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos, neg = s[y], np.sort(s[~y])
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs both positive and negative examples")
    below = np.searchsorted(neg, pos, side="left")
    below_or_tied = np.searchsorted(neg, pos, side="right")
    # twice the U statistic is an integer, so the division below is exact up to rounding
    u2 = int(below.sum()) + int(below_or_tied.sum())
    return u2 / (2 * pos.size * neg.size)


def _codes(labels) -> np.ndarray:
    """Category indices (Unknown 0, AD 1, CN 2) of a label sequence."""
    if isinstance(labels, np.ndarray) and labels.dtype.kind in "iu":
        return labels
    return np.array([Category(lab).index for lab in labels], dtype=int)


def _sensitivity_codes(pred: np.ndarray, truth: np.ndarray, code: int) -> float:
    idx = truth == code
    n = int(idx.sum())
    if n == 0:
        raise UndefinedMetricError(f"class {OPEN_SET_ORDER[code].value} absent from truth")
    return int((pred[idx] == code).sum()) / n


def sensitivity(pred, truth, cat) -> float:
    """Fraction of records of class ``cat`` whose decision is ``cat``."""
    return _sensitivity_codes(_codes(pred), _codes(truth), Category(cat).index)


def confusion_matrix(pred, truth) -> np.ndarray:
    """3x3 counts; rows are true classes, columns decisions, both in (Unknown, AD, CN) order."""
    cm = np.zeros((len(OPEN_SET_ORDER), len(OPEN_SET_ORDER)), dtype=int)
    np.add.at(cm, (_codes(truth), _codes(pred)), 1)
    return cm


# --- bootstrap ------------------------------------------------------------------


def _as_columns(test) -> tuple[np.ndarray, ...]:
    cols = tuple(np.asarray(c) for c in (test if isinstance(test, tuple) else (test,)))
    n = len(cols[0])
    if n == 0:
        raise ValueError("bootstrap needs a nonempty test set")
    if any(len(c) != n for c in cols):
        raise ValueError("bootstrap columns differ in length")
    return cols


def bootstrap_values(
    metric: Callable[..., float],
    test,
    resample_n: int = DEFAULT_BOOTSTRAP.resample_n,
    trials: int = DEFAULT_BOOTSTRAP.trials,
    seed: int = 0,
    max_redraw_factor: int = DEFAULT_BOOTSTRAP.max_redraw_factor,
) -> np.ndarray:
    """Metric value on each of ``trials`` resamples.

    ``test`` is one array or a tuple of equal-length arrays; ``metric`` is
    called with the resampled columns. Trial ``i`` draws from its own stream
    seeded by ``(seed, i)``. A resample on which the metric raises
    :class:`UndefinedMetricError` is redrawn from the same stream; more than
    ``max_redraw_factor * trials`` redraws in total is an error.
    """
    cols = _as_columns(test)
    n = len(cols[0])
    if resample_n < 1 or trials < 1:
        raise ValueError("resample_n and trials must be positive")
    budget = max_redraw_factor * trials
    redraws = 0
    out = np.empty(trials)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        while True:
            idx = rng.integers(0, n, size=resample_n)
            try:
                out[t] = metric(*(c[idx] for c in cols))
                break
            except UndefinedMetricError:
                redraws += 1
                if redraws > budget:
                    raise UndefinedMetricError(
                        f"metric undefined on more than {budget} resamples; the test set is too small or one-sided"
                    ) from None
    return out


def bootstrap_ci(
    metric: Callable[..., float],
    test,
    resample_n: int = DEFAULT_BOOTSTRAP.resample_n,
    trials: int = DEFAULT_BOOTSTRAP.trials,
    seed: int = 0,
    percentiles: Sequence[float] = DEFAULT_BOOTSTRAP.percentiles,
) -> tuple[float, float]:
    """Percentile bootstrap interval (linear interpolation between order statistics)."""
    values = bootstrap_values(metric, test, resample_n, trials, seed)
    lo, hi = np.percentile(values, list(percentiles))
    return float(lo), float(hi)


# --- report ---------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    value: float
    lo: float
    hi: float

    def to_dict(self) -> dict:
        return {"value": self.value, "lo": self.lo, "hi": self.hi}


@dataclass
class EvalReport:
    sensitivity: dict  # Category -> Interval, all three classes
    auc: dict  # Category -> Interval, known classes only
    confusion: np.ndarray
    n: int
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "n": self.n,
            "sensitivity": {c.value: iv.to_dict() for c, iv in self.sensitivity.items()},
            "auc": {c.value: iv.to_dict() for c, iv in self.auc.items()},
            "confusion": {
                "order": [c.value for c in OPEN_SET_ORDER],
                "rows": "truth",
                "columns": "decision",
                "matrix": self.confusion.tolist(),
            },
            "bootstrap": {
                "resample_n": self.bootstrap.resample_n,
                "trials": self.bootstrap.trials,
                "percentiles": list(self.bootstrap.percentiles),
                "seed": self.seed,
            },
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _interval(point: float, lo: float, hi: float) -> Interval:
    # a percentile interval need not cover the full-sample estimate; widen to it
    return Interval(point, min(lo, point), max(hi, point))


def evaluate(
    decisions,
    probs: np.ndarray,
    truth,
    config: BootstrapConfig = DEFAULT_BOOTSTRAP,
    seed: int = 0,
) -> EvalReport:
    """Sensitivity for every class present and AUC for AD and CN.

    Parameters
    ----------
    decisions : sequence of Category
    probs : ndarray, shape (n, 3)
        Final probabilities in (Unknown, AD, CN) order; the AUC of a known
        class uses its column.
    truth : sequence of Category
    """
    decisions = _codes(decisions)
    truth = _codes(truth)
    probs = np.asarray(probs, dtype=float)
    if len(decisions) == 0:
        raise DataError("nothing to evaluate")
    if not (len(decisions) == len(truth) == len(probs)):
        raise DataError("decisions, probabilities and truth differ in length")

    boot = dict(resample_n=config.resample_n, trials=config.trials, seed=seed, percentiles=config.percentiles)
    sens = {}
    for cat in OPEN_SET_ORDER:
        if not np.any(truth == cat.index):
            continue
        point = _sensitivity_codes(decisions, truth, cat.index)
        lo, hi = bootstrap_ci(lambda d, t, c=cat.index: _sensitivity_codes(d, t, c), (decisions, truth), **boot)
        sens[cat] = _interval(point, lo, hi)
    auc = {}
    for cat in KNOWN:
        flags = truth == cat.index
        if flags.all() or not flags.any():
            continue
        point = auc_ovr(probs[:, cat.index], flags)
        lo, hi = bootstrap_ci(auc_ovr, (probs[:, cat.index], flags), **boot)
        auc[cat] = _interval(point, lo, hi)
    return EvalReport(sens, auc, confusion_matrix(decisions, truth), len(truth), config, seed)


# --- prediction and distance tables --------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_predictions(path, records, predictions) -> None:
    """CSV with a leading format comment and PREDICTION_COLUMNS."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# openapmax-predictions format-version={FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for r, p in zip(records, predictions):
            w.writerow(
                [r.subject_id, r.visit_id, *(_fmt(x) for x in p.probs), *(_fmt(x) for x in p.distances), p.decision.value]
            )


@dataclass
class PredictionTable:
    keys: list  # (subject_id, visit_id)
    probs: np.ndarray
    distances: np.ndarray
    decisions: list


def read_predictions(path) -> PredictionTable:
    path = Path(path)
    keys, probs, dists, decisions = [], [], [], []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or tuple(header) != PREDICTION_COLUMNS:
        raise DataError(f"{path}: expected columns {', '.join(PREDICTION_COLUMNS)}")
    for row_no, row in enumerate(reader, start=2):
        if len(row) != len(PREDICTION_COLUMNS):
            raise DataError(f"{path}: row {row_no} has {len(row)} fields, expected {len(PREDICTION_COLUMNS)}")
        try:
            p = [float(x) for x in row[2:5]]
            d = [float(x) for x in row[5:7]]
            dec = Category.parse(row[7])
        except ValueError as exc:
            raise DataError(f"{path}: row {row_no}: {exc}") from None
        keys.append((row[0], row[1]))
        probs.append(p)
        dists.append(d)
        decisions.append(dec)
    return PredictionTable(keys, np.array(probs).reshape(-1, 3), np.array(dists).reshape(-1, 2), decisions)


def align_truth(table: PredictionTable, truth: Dataset) -> list:
    """True labels for each prediction row, matched on (subject_id, visit_id)."""
    by_key = {r.key: r.label for r in truth.records}
    out = []
    for key in table.keys:
        if key not in by_key:
            raise DataError(f"no truth record for subject {key[0]} visit {key[1]}")
        if by_key[key] is None:
            raise DataError(f"truth record for subject {key[0]} visit {key[1]} has no label")
        out.append(by_key[key])
    return out


def write_distances(path, records, predictions) -> None:
    """Per-record (dist_AD, dist_CN, label) rows for a distance scatter plot."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# openapmax-distances format-version={FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DISTANCE_COLUMNS)
        for r, p in zip(records, predictions):
            w.writerow([*(_fmt(x) for x in p.distances), r.label.value if r.label is not None else ""])
