"""Synthetic multi-strategy cohorts.

Known categories draw each indicator uniformly over that category's
clinical normal range. Unknown (MCI-like) records draw from the band
between the AD and CN ranges, widened by 10%, so they sit next to both
known populations without matching either.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data_model import INDICATORS, INDICATOR_INDEX, KNOWN, N_INDICATORS, Category, DataError, Dataset, SubjectRecord
from .pattern import TABLE1_RANGES

PRESETS = ("screening", "single-strategy", "multi-strategy")
UNKNOWN_WIDEN = 0.10

SINGLE_STRATEGY = ("CCI12", "CCI20", "CDRSB", "ADAS11", "ADAS13", "ADASQ4", "MMSE", "MOCA", "mPACCdigit", "mPACCtrailsB")

_HISTORY = ("Psychiatric", "NeurologicOther")
_SYMPTOMS = ("PresentCount21", "PresentCount28")
_CCI = ("CCI12", "CCI20")
_ADAS = ("ADAS11", "ADAS13", "ADASQ4")
_PACC = ("mPACCdigit", "mPACCtrailsB")


def _without(*groups) -> tuple[str, ...]:
    drop = {name for g in groups for name in g}
    return tuple(n for n in INDICATORS if n not in drop)


# (observed indicators, weight); sizes range from 7 to 14
MULTI_STRATEGY = (
    (INDICATORS, 0.20),
    (_without(_HISTORY), 0.12),
    (_without(_SYMPTOMS), 0.12),
    (_without(_HISTORY, _SYMPTOMS), 0.12),
    (_without(("MOCA",)), 0.10),
    (_without(_CCI), 0.08),
    (_without(_PACC), 0.08),
    (_without(("ADASQ4", "MMSE")), 0.08),
    (_without(_HISTORY, _SYMPTOMS, ("ADASQ4",)), 0.05),
    (("CDRSB", "ADAS11", "ADAS13", "MMSE", "MOCA", "mPACCdigit", "mPACCtrailsB"), 0.05),
)


@dataclass(frozen=True)
class IndicatorLaw:
    """Sampling law for one indicator: uniform on [low, high] or a normal truncated to it."""

    low: float
    high: float
    kind: str = "uniform"
    mean: Optional[float] = None
    std: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low > self.high:
            raise DataError(f"invalid law bounds [{self.low}, {self.high}]")
        if self.kind not in ("uniform", "truncnorm"):
            raise DataError(f"unknown law kind {self.kind!r}")
        if self.kind == "truncnorm" and (self.std is None or self.std <= 0):
            raise DataError("truncnorm law needs std > 0")

    def sample(self, rng: np.random.Generator) -> float:
        if self.low == self.high:
            return self.low
        if self.kind == "uniform":
            return float(rng.uniform(self.low, self.high))
        mean = 0.5 * (self.low + self.high) if self.mean is None else self.mean
        for _ in range(10_000):
            v = rng.normal(mean, self.std)
            if self.low <= v <= self.high:
                return float(v)
        return float(np.clip(mean, self.low, self.high))


@dataclass
class CohortSpec:
    counts: dict  # Category -> int
    laws: dict  # Category -> {indicator: IndicatorLaw}
    strategies: Sequence  # [(indicator names, weight)]
    seed: int = 0

    def validate(self) -> None:
        for cat, n in self.counts.items():
            if n < 0:
                raise DataError(f"negative count for {cat}")
            if n and cat not in self.laws:
                raise DataError(f"no sampling laws for {cat}")
            if n:
                missing = [name for name in INDICATORS if name not in self.laws[cat]]
                if missing:
                    raise DataError(f"no law for {cat.value}: {', '.join(missing)}")
        if not self.strategies:
            raise DataError("strategy catalog is empty")
        weights = np.array([w for _, w in self.strategies], dtype=float)
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-9):
            raise DataError("strategy weights must be nonnegative and sum to 1")
        for subset, _ in self.strategies:
            if not subset:
                raise DataError("strategy subsets must be nonempty")
            for name in subset:
                if name not in INDICATOR_INDEX:
                    raise DataError(f"unknown indicator {name!r} in strategy")


def unknown_band(name: str, widen: float = UNKNOWN_WIDEN) -> tuple[float, float]:
    """Interval between the AD and CN normal ranges' facing boundaries, widened."""
    a_lo, a_hi = TABLE1_RANGES[Category.AD][name]
    c_lo, c_hi = TABLE1_RANGES[Category.CN][name]
    lo, hi = sorted((min(a_hi, c_hi), max(a_lo, c_lo)))
    pad = 0.5 * widen * (hi - lo)
    return lo - pad, hi + pad


def default_laws() -> dict:
    laws = {cat: {name: IndicatorLaw(*TABLE1_RANGES[cat][name]) for name in INDICATORS} for cat in KNOWN}
    laws[Category.UNKNOWN] = {name: IndicatorLaw(*unknown_band(name)) for name in INDICATORS}
    return laws


def default_spec(preset: str = "multi-strategy", counts=(400, 400, 200), seed: int = 0) -> CohortSpec:
    if preset == "screening":
        strategies = [(INDICATORS, 1.0)]
    elif preset == "single-strategy":
        strategies = [(SINGLE_STRATEGY, 1.0)]
    elif preset == "multi-strategy":
        strategies = list(MULTI_STRATEGY)
    else:
        raise DataError(f"unknown preset {preset!r}; expected one of {', '.join(PRESETS)}")
    n_ad, n_cn, n_unknown = counts
    return CohortSpec(
        {Category.AD: int(n_ad), Category.CN: int(n_cn), Category.UNKNOWN: int(n_unknown)},
        default_laws(),
        strategies,
        seed,
    )


def generate_cohort(spec: CohortSpec) -> Dataset:
    """Draw one visit per subject; deterministic in ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    weights = np.array([w for _, w in spec.strategies], dtype=float)
    subsets = [set(s) for s, _ in spec.strategies]
    records = []
    sid = 0
    for cat in (Category.AD, Category.CN, Category.UNKNOWN):
        for _ in range(spec.counts.get(cat, 0)):
            observed = subsets[int(rng.choice(len(subsets), p=weights))]
            values = [
                spec.laws[cat][name].sample(rng) if name in observed else None for name in INDICATORS
            ]
            sid += 1
            records.append(SubjectRecord(f"S{sid:05d}", "V1", tuple(values), cat))
    return Dataset(tuple(records), "all")
