"""Per-category normal ranges and binary abnormal patterns.

A pattern has two bits per indicator: bit ``2*i`` flags indicator ``i`` as
outside the AD normal range, bit ``2*i + 1`` as outside the CN range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .data_model import INDICATORS, INDICATOR_INDEX, KNOWN, N_INDICATORS, Category, DataError, Dataset, SubjectRecord

PATTERN_DIM = N_INDICATORS * len(KNOWN)
MIN_OBSERVATIONS = 20
LOW_PERCENTILE = 5.0
HIGH_PERCENTILE = 95.0

# Clinical normal ranges per category, (low, high) in indicator order.
TABLE1_RANGES: dict[Category, dict[str, tuple[float, float]]] = {
    Category.AD: {
        "Psychiatric": (0.0, 0.0),
        "NeurologicOther": (0.0, 0.0),
        "PresentCount21": (0.0, 6.0),
        "PresentCount28": (0.0, 8.0),
        "CCI12": (32.2188, 60.0),
        "CCI20": (50.3438, 100.0),
        "CDRSB": (2.0, 18.0),
        "ADAS11": (10.0, 70.0),
        "ADAS13": (18.0, 85.0),
        "ADASQ4": (5.0, 10.0),
        "MMSE": (0.0, 27.0),
        "MOCA": (0.0, 23.0),
        "mPACCdigit": (-30.0745, -7.6955),
        "mPACCtrailsB": (-29.7277, -6.7798),
    },
    Category.CN: {
        "Psychiatric": (0.0, 0.0),
        "NeurologicOther": (0.0, 0.0),
        "PresentCount21": (0.0, 6.0),
        "PresentCount28": (0.0, 8.0),
        "CCI12": (12.0, 13.5634),
        "CCI20": (20.0, 22.0845),
        "CDRSB": (0.0, 0.0),
        "ADAS11": (0.0, 11.264),
        "ADAS13": (0.0, 17.67),
        "ADASQ4": (0.0, 6.0),
        "MMSE": (25.0, 30.0),
        "MOCA": (26.0, 30.0),
        "mPACCdigit": (-5.1733, 4.7304),
        "mPACCtrailsB": (-4.8523, 4.3338),
    },
}

GUIDELINE_INDICATORS = ("MMSE", "MOCA")


@dataclass(frozen=True)
class NormalRange:
    low: float
    high: float
    provenance: str = "statistical"

    def __post_init__(self):
        if not (np.isfinite(self.low) and np.isfinite(self.high)):
            raise DataError("normal range bounds must be finite")
        if self.low > self.high:
            raise DataError(f"normal range low {self.low} > high {self.high}")
        if self.provenance not in ("literature", "statistical"):
            raise DataError(f"invalid provenance {self.provenance!r}")

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


class RangeTable:
    """Complete (category, indicator) -> NormalRange mapping."""

    def __init__(self, entries: Mapping[Category, Mapping[str, NormalRange]]):
        table = {}
        for cat in KNOWN:
            if cat not in entries:
                raise DataError(f"range table missing category {cat.value}")
            row = {}
            for name in INDICATORS:
                if name not in entries[cat]:
                    raise DataError(f"range table missing ({cat.value}, {name})")
                row[name] = entries[cat][name]
            table[cat] = row
        self._table = table
        lows = np.empty(PATTERN_DIM)
        highs = np.empty(PATTERN_DIM)
        for i, name in enumerate(INDICATORS):
            for c, cat in enumerate(KNOWN):
                lows[2 * i + c] = table[cat][name].low
                highs[2 * i + c] = table[cat][name].high
        self.lows = lows
        self.highs = highs

    def __getitem__(self, key: tuple[Category, str]) -> NormalRange:
        cat, name = key
        return self._table[cat][name]

    def __eq__(self, other):
        return isinstance(other, RangeTable) and self._table == other._table

    def to_dict(self) -> dict:
        return {
            cat.value: {
                name: {"low": r.low, "high": r.high, "provenance": r.provenance}
                for name, r in self._table[cat].items()
            }
            for cat in KNOWN
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "RangeTable":
        entries = {}
        for cat in KNOWN:
            entries[cat] = {
                name: NormalRange(float(r["low"]), float(r["high"]), r.get("provenance", "statistical"))
                for name, r in obj[cat.value].items()
            }
        return cls(entries)

    def save(self, path) -> None:
        payload = {"format_version": 1, "ranges": self.to_dict()}
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def load(cls, path) -> "RangeTable":
        obj = json.loads(Path(path).read_text())
        return cls.from_dict(obj.get("ranges", obj))


def guideline_overrides() -> dict[Category, dict[str, NormalRange]]:
    """MMSE and MOCA bounds taken verbatim from clinical guidelines."""
    return {
        cat: {name: NormalRange(*TABLE1_RANGES[cat][name], provenance="literature") for name in GUIDELINE_INDICATORS}
        for cat in KNOWN
    }


def load_overrides(path) -> dict[Category, dict[str, NormalRange]]:
    """Read a partial range table: ``{category: {indicator: {low, high}}}``."""
    obj = json.loads(Path(path).read_text())
    obj = obj.get("ranges", obj)
    out: dict[Category, dict[str, NormalRange]] = {}
    for cat_name, row in obj.items():
        cat = Category(cat_name)
        if cat not in KNOWN:
            raise DataError(f"overrides may only cover known categories, got {cat_name!r}")
        for name, r in row.items():
            if name not in INDICATOR_INDEX:
                raise DataError(f"unknown indicator {name!r} in overrides")
            out.setdefault(cat, {})[name] = NormalRange(
                float(r["low"]), float(r["high"]), r.get("provenance", "literature")
            )
    return out


def table1_ranges() -> dict[Category, dict[str, NormalRange]]:
    return {
        cat: {name: NormalRange(*TABLE1_RANGES[cat][name], provenance="literature") for name in INDICATORS}
        for cat in KNOWN
    }


def estimate_normal_ranges(
    train: Dataset,
    overrides: Optional[Mapping[Category, Mapping[str, NormalRange]]] = None,
    fallback: Optional[Mapping[Category, Mapping[str, NormalRange]]] = None,
) -> RangeTable:
    """5th/95th percentile ranges per (category, indicator).

    ``overrides`` (default: guideline MMSE and MOCA bounds) win verbatim.
    Entries with fewer than 20 observed values raise, unless ``fallback``
    supplies them.
    """
    overrides = guideline_overrides() if overrides is None else overrides
    data = train.matrix()
    entries: dict[Category, dict[str, NormalRange]] = {}
    for cat in KNOWN:
        rows = data[np.array([r.label == cat for r in train.records], dtype=bool)] if len(data) else data
        entries[cat] = {}
        for i, name in enumerate(INDICATORS):
            if name in overrides.get(cat, {}):
                entries[cat][name] = overrides[cat][name]
                continue
            col = rows[:, i]
            col = col[~np.isnan(col)]
            if col.size < MIN_OBSERVATIONS:
                if fallback is not None and name in fallback.get(cat, {}):
                    entries[cat][name] = fallback[cat][name]
                    continue
                raise DataError(
                    f"insufficient data for ({cat.value}, {name}): {col.size} observed values, "
                    f"need {MIN_OBSERVATIONS}"
                )
            low, high = np.percentile(col, [LOW_PERCENTILE, HIGH_PERCENTILE])
            entries[cat][name] = NormalRange(float(low), float(high), "statistical")
    return RangeTable(entries)


@dataclass(frozen=True)
class AbnormalPattern:
    bits: np.ndarray  # uint8, length PATTERN_DIM
    mask: np.ndarray  # bool, length N_INDICATORS

    def __eq__(self, other):
        return (
            isinstance(other, AbnormalPattern)
            and np.array_equal(self.bits, other.bits)
            and np.array_equal(self.mask, other.mask)
        )

    def __hash__(self):
        return hash((self.bits.tobytes(), self.mask.tobytes()))

    def as_float(self) -> np.ndarray:
        return self.bits.astype(float)


def binarize(record: SubjectRecord, ranges: RangeTable) -> AbnormalPattern:
    x = record.as_array()
    mask = ~np.isnan(x)
    xx = np.repeat(x, len(KNOWN))
    with np.errstate(invalid="ignore"):
        outside = (xx < ranges.lows) | (xx > ranges.highs)
    outside &= np.repeat(mask, len(KNOWN))
    return AbnormalPattern(outside.astype(np.uint8), mask)


def binarize_many(records, ranges: RangeTable) -> np.ndarray:
    """Stack pattern bits of ``records`` into an (n, PATTERN_DIM) float array."""
    if not len(records):
        return np.empty((0, PATTERN_DIM))
    return np.stack([binarize(r, ranges).as_float() for r in records])


def _bits(p) -> np.ndarray:
    return p.as_float() if isinstance(p, AbnormalPattern) else np.asarray(p, dtype=float)


def pattern_distance(a, b) -> float:
    """Euclidean distance between a pattern's bits and a real-valued center."""
    a, b = _bits(a), _bits(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))
