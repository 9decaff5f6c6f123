"""Open-set probability estimation over {Unknown, AD, CN}.

``fit_openapmax`` clusters the abnormal patterns of correctly classified
training records per category, fits a Weibull tail to their combined
distances, and records a quantile threshold. ``predict_openapmax`` revises
the classifier's activation vector with the tail scores and, with flag F,
scales each known-class probability down by how far the record lies past
that category's threshold.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifier import ClassifierModel, activations, softmax
from .cluster import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_ITERATIONS,
    DEFAULT_N_CENTERS,
    ClusterCenters,
    fit_minibatch_kmeans,
    min_distance_to_centers,
)
from .data_model import KNOWN, OPEN_SET_ORDER, Category, DataError, Dataset, SubjectRecord
from .evt import WeibullTailModel, fit_weibull_tail, w_score
from .pattern import AbnormalPattern, RangeTable, binarize

FORMAT_VERSION = 1
OMEGA_FORMS = ("printed", "openmax")
DEFAULT_QUANTILE = 0.95
DEFAULT_ALPHA = 2


class ModelError(ValueError):
    """Raised when an open-set model cannot be fit or loaded."""


@dataclass
class OpenSetPrediction:
    probs: np.ndarray  # (P_unknown, P_AD, P_CN)
    distances: np.ndarray  # per known category
    omega: np.ndarray  # per known category, 1 where not revised
    decision: Category
    raw_softmax: Optional[np.ndarray] = None

    @property
    def p_unknown(self) -> float:
        return float(self.probs[0])

    def prob(self, cat: Category) -> float:
        return float(self.probs[cat.index])


# --- shared revision arithmetic -------------------------------------------------


def combined_distance(x, own: ClusterCenters, others: ClusterCenters) -> float:
    """sqrt(d_own**2 + (1 - d_other)**2) with min distances to each center set."""
    d_own = min_distance_to_centers(x, own)
    d_other = min_distance_to_centers(x, others)
    return float(np.sqrt(d_own**2 + (1.0 - d_other) ** 2))


def _merge(centers: Sequence[ClusterCenters]) -> ClusterCenters:
    return ClusterCenters(np.concatenate([c.centers for c in centers]), 0.0)


def rank_factor(rank: int, alpha: int, form: str = "printed") -> float:
    """Weight of the w-score for the class at 1-based ``rank``."""
    if rank > alpha:
        return 0.0
    if form == "printed":
        return (alpha - rank) / alpha
    if form == "openmax":
        return (alpha - rank + 1) / alpha
    raise ValueError(f"unknown omega form {form!r}")


def compute_omega(v, wscores, alpha: int, form: str = "printed") -> np.ndarray:
    """Per-class revision multipliers.

    Classes are ranked by descending activation; the class at rank ``i``
    (i <= alpha) gets ``1 - factor(i) * w_score`` using its own tail score.
    """
    v = np.asarray(v, dtype=float)
    wscores = np.asarray(wscores, dtype=float)
    omega = np.ones_like(v)
    order = np.argsort(-v, kind="stable")
    for rank, cls in enumerate(order[:alpha], start=1):
        omega[cls] = 1.0 - rank_factor(rank, alpha, form) * wscores[cls]
    return omega


def abnormality_scores(dists, thresholds) -> np.ndarray:
    """clamp((dist - Thr) / Thr, 0, 1) per category."""
    dists = np.asarray(dists, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    diff = dists - thresholds
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        score = np.where(thresholds > 0, diff / np.where(thresholds > 0, thresholds, 1.0), np.inf)
    return np.where(diff <= 0, 0.0, np.minimum(score, 1.0))


def revise(v, omega, dists=None, thresholds=None, flag_f: bool = False) -> np.ndarray:
    """Open-set probabilities (Unknown, AD, CN) from activations and multipliers."""
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    v_hat = v * omega
    v0 = float(np.sum(v * (1.0 - omega)))
    probs = softmax(np.concatenate([[v0], v_hat]))
    if flag_f:
        probs[1:] *= 1.0 - abnormality_scores(dists, thresholds)
        probs[0] = max(0.0, 1.0 - probs[1:].sum())
    return probs


def _decide(probs: np.ndarray) -> Category:
    return OPEN_SET_ORDER[int(np.argmax(probs))]


# --- OpenAPMax ------------------------------------------------------------------


@dataclass
class CategoryModel:
    category: Category
    centers: ClusterCenters
    weibull: WeibullTailModel
    threshold: float
    quantile: float
    distances: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.to_dict(),
            "weibull": self.weibull.to_dict(),
            "thr": self.threshold,
            "q": self.quantile,
            "n": self.centers.k,
        }

    @classmethod
    def from_dict(cls, cat: Category, obj) -> "CategoryModel":
        return cls(
            cat,
            ClusterCenters.from_dict(obj["centers"]),
            WeibullTailModel.from_dict(obj["weibull"]),
            float(obj["thr"]),
            float(obj["q"]),
        )


@dataclass
class OpenApMaxModel:
    categories: dict  # Category -> CategoryModel
    ranges: RangeTable
    classifier: ClassifierModel
    alpha: int = DEFAULT_ALPHA
    flag_f: bool = True
    omega_form: str = "printed"

    def __post_init__(self):
        if not 1 <= self.alpha <= len(KNOWN):
            raise ModelError(f"alpha must be in [1, {len(KNOWN)}], got {self.alpha}")
        if self.omega_form not in OMEGA_FORMS:
            raise ModelError(f"unknown omega form {self.omega_form!r}")

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([self.categories[c].threshold for c in KNOWN])

    def distances(self, pattern) -> np.ndarray:
        out = np.empty(len(KNOWN))
        for i, cat in enumerate(KNOWN):
            others = _merge([self.categories[c].centers for c in KNOWN if c != cat])
            out[i] = combined_distance(pattern, self.categories[cat].centers, others)
        return out

    def to_dict(self, classifier_ref: Optional[str] = None) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "openapmax",
            "alpha": self.alpha,
            "flag_f": self.flag_f,
            "omega_form": self.omega_form,
            "ranges": self.ranges.to_dict(),
            "categories": {c.value: self.categories[c].to_dict() for c in KNOWN},
            "classifier": classifier_ref,
        }

    def save(self, path, classifier_path) -> None:
        path = Path(path)
        ref = os.path.relpath(Path(classifier_path).resolve(), path.resolve().parent)
        path.write_text(json.dumps(self.to_dict(ref), indent=1))

    @classmethod
    def from_dict(cls, obj, classifier: ClassifierModel) -> "OpenApMaxModel":
        if obj.get("kind") != "openapmax":
            raise ModelError("not an OpenAPMax model file")
        return cls(
            {c: CategoryModel.from_dict(c, obj["categories"][c.value]) for c in KNOWN},
            RangeTable.from_dict(obj["ranges"]),
            classifier,
            int(obj["alpha"]),
            bool(obj["flag_f"]),
            obj.get("omega_form", "printed"),
        )

    @classmethod
    def load(cls, path, classifier: Optional[ClassifierModel] = None) -> "OpenApMaxModel":
        path = Path(path)
        obj = json.loads(path.read_text())
        if classifier is None:
            ref = obj.get("classifier")
            if not ref:
                raise ModelError("model file has no classifier reference")
            classifier = ClassifierModel.load(path.parent / ref)
        return cls.from_dict(obj, classifier)


def _per_category(value, name: str) -> dict:
    if isinstance(value, dict):
        return {Category(k) if not isinstance(k, Category) else k: v for k, v in value.items()}
    if np.isscalar(value):
        return {c: value for c in KNOWN}
    if len(value) != len(KNOWN):
        raise ModelError(f"{name} needs one value per known category")
    return dict(zip(KNOWN, value))


def fit_openapmax(
    train: Dataset,
    classifier: ClassifierModel,
    ranges: RangeTable,
    n_centers=DEFAULT_N_CENTERS,
    quantiles=DEFAULT_QUANTILE,
    tail_size: Optional[int] = None,
    seed: int = 0,
    alpha: int = DEFAULT_ALPHA,
    flag_f: bool = True,
    omega_form: str = "printed",
    batch_size: int = DEFAULT_BATCH_SIZE,
    iterations: int = DEFAULT_ITERATIONS,
) -> OpenApMaxModel:
    """Fit per-category centers, Weibull tails and thresholds.

    Only training records that the classifier assigns to their own label
    contribute. ``n_centers`` and ``quantiles`` take a scalar, a pair in
    (AD, CN) order, or a mapping keyed by category.
    """
    n_centers = _per_category(n_centers, "n_centers")
    quantiles = _per_category(quantiles, "quantiles")
    for cat, q in quantiles.items():
        if not 0 < q <= 1:
            raise ModelError(f"quantile for {cat.value} must be in (0, 1], got {q}")

    records = [r for r in train.records if r.label in KNOWN]
    if not records:
        raise ModelError("training set has no known-category records")
    acts = classifier.activations_matrix(np.stack([r.as_array() for r in records]))
    predicted = acts.argmax(1)

    patterns: dict = {}
    for i, cat in enumerate(KNOWN):
        rows = [r for r, p in zip(records, predicted) if r.label == cat and p == i]
        if not rows:
            raise ModelError(f"no correctly classified training records for {cat.value}")
        patterns[cat] = np.stack([binarize(r, ranges).as_float() for r in rows])

    centers = {}
    for i, cat in enumerate(KNOWN):
        centers[cat] = fit_minibatch_kmeans(
            patterns[cat], int(n_centers[cat]), batch_size=batch_size, iterations=iterations, seed=seed + i
        )

    categories = {}
    for cat in KNOWN:
        others = _merge([centers[c] for c in KNOWN if c != cat])
        dist = np.array([combined_distance(x, centers[cat], others) for x in patterns[cat]])
        weib = fit_weibull_tail(dist, tail_size)
        thr = float(np.quantile(dist, quantiles[cat]))
        categories[cat] = CategoryModel(cat, centers[cat], weib, thr, float(quantiles[cat]), dist)
    return OpenApMaxModel(categories, ranges, classifier, alpha, flag_f, omega_form)


def predict_openapmax(m: OpenApMaxModel, record: SubjectRecord, v=None) -> OpenSetPrediction:
    pattern = binarize(record, m.ranges)
    if v is None:
        v = activations(m.classifier, record)
    dists = m.distances(pattern)
    ws = np.array([w_score(m.categories[c].weibull, d) for c, d in zip(KNOWN, dists)])
    omega = compute_omega(v, ws, m.alpha, m.omega_form)
    probs = revise(v, omega, dists, m.thresholds, m.flag_f)
    return OpenSetPrediction(probs, dists, omega, _decide(probs), softmax(v))


def predict_many(m: OpenApMaxModel, records: Sequence[SubjectRecord]) -> list[OpenSetPrediction]:
    if not records:
        return []
    acts = m.classifier.activations_matrix(np.stack([r.as_array() for r in records]))
    return [predict_openapmax(m, r, v) for r, v in zip(records, acts)]


# --- baselines ------------------------------------------------------------------


@dataclass
class OpenMaxModel:
    """OpenMax: mean activation vectors plus Weibull tails in activation space."""

    mav: np.ndarray  # (L, L)
    weibulls: list
    classifier: ClassifierModel
    alpha: int = DEFAULT_ALPHA
    omega_form: str = "printed"


def fit_openmax(
    train: Dataset,
    classifier: ClassifierModel,
    tail_size: Optional[int] = None,
    alpha: int = DEFAULT_ALPHA,
    omega_form: str = "printed",
) -> OpenMaxModel:
    records = [r for r in train.records if r.label in KNOWN]
    acts = classifier.activations_matrix(np.stack([r.as_array() for r in records]))
    labels = np.array([KNOWN.index(r.label) for r in records])
    correct = acts.argmax(1) == labels
    mav, weibulls = [], []
    for i, cat in enumerate(KNOWN):
        av = acts[correct & (labels == i)]
        if not len(av):
            raise ModelError(f"no correctly classified training records for {cat.value}")
        center = av.mean(0)
        dist = np.linalg.norm(av - center, axis=1)
        mav.append(center)
        weibulls.append(fit_weibull_tail(dist, tail_size))
    return OpenMaxModel(np.array(mav), weibulls, classifier, alpha, omega_form)


def predict_openmax(b: OpenMaxModel, record: SubjectRecord, v=None) -> OpenSetPrediction:
    if v is None:
        v = activations(b.classifier, record)
    v = np.asarray(v, dtype=float)
    dists = np.linalg.norm(b.mav - v, axis=1)
    ws = np.array([w_score(w, d) for w, d in zip(b.weibulls, dists)])
    omega = compute_omega(v, ws, b.alpha, b.omega_form)
    probs = revise(v, omega)
    return OpenSetPrediction(probs, dists, omega, _decide(probs), softmax(v))


def predict_softmax_threshold(c: ClassifierModel, record: SubjectRecord, tau: float, v=None) -> OpenSetPrediction:
    """Unknown when the top softmax probability falls below ``tau``.

    ``probs`` carries the raw closed-set softmax with zero unknown mass;
    the rejection shows only in ``decision``.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must be in (0, 1)")
    if v is None:
        v = activations(c, record)
    p = softmax(v)
    probs = np.concatenate([[0.0], p])
    if p.max() < tau:
        decision = Category.UNKNOWN
    else:
        decision = KNOWN[int(p.argmax())]
    return OpenSetPrediction(probs, np.full(len(KNOWN), np.nan), np.ones(len(KNOWN)), decision, p)


def tune_tau(c: ClassifierModel, val: Dataset, target_sensitivity: float) -> float:
    """Largest tau whose known-class sensitivity on ``val`` reaches the target.

    Known-class sensitivity counts a record as correct when it is decided as
    its own label (not Unknown). The result is clipped to [0.5, 1).
    """
    records = [r for r in val.records if r.label in KNOWN]
    if not records:
        raise DataError("validation set has no known-category records")
    p = softmax(c.activations_matrix(np.stack([r.as_array() for r in records])))
    labels = np.array([KNOWN.index(r.label) for r in records])
    maxp = p.max(1)
    hits = np.sort(maxp[p.argmax(1) == labels])[::-1]
    need = int(np.ceil(target_sensitivity * len(records) - 1e-12))
    if need <= 0:
        return float(np.nextafter(1.0, 0.0))
    if need > len(hits):
        return 0.5
    return float(np.clip(hits[need - 1], 0.5, np.nextafter(1.0, 0.0)))
