"""Subject records, datasets, and CSV / JSON-lines ingestion."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

FORMAT_VERSION = 1

# Column names as they appear in files, in fixed indicator order.
INDICATORS: tuple[str, ...] = (
    "Psychiatric",
    "NeurologicOther",
    "PresentCount21",
    "PresentCount28",
    "CCI12",
    "CCI20",
    "CDRSB",
    "ADAS11",
    "ADAS13",
    "ADASQ4",
    "MMSE",
    "MOCA",
    "mPACCdigit",
    "mPACCtrailsB",
)

# Display names used in the clinical normal-range table.
INDICATOR_LABELS: tuple[str, ...] = (
    "Psychiatric",
    "Neurologic-other-than-AD",
    "Present_count_21",
    "Present_count_28",
    "CCI_Score_12",
    "CCI_Score_20",
    "CDRSB",
    "ADAS11",
    "ADAS13",
    "ADASQ4",
    "MMSE",
    "MOCA",
    "mPACCdigit",
    "mPCCtrailsB",
)

N_INDICATORS = len(INDICATORS)
INDICATOR_INDEX = {name: i for i, name in enumerate(INDICATORS)}
META_COLUMNS = ("subject_id", "visit_id", "label")
CSV_HEADER = META_COLUMNS + INDICATORS

SPLITS = ("train", "validation", "test", "all")


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class IndicatorId:
    index: int
    name: str

    @property
    def label(self) -> str:
        return INDICATOR_LABELS[self.index]

    @classmethod
    def from_name(cls, name: str) -> "IndicatorId":
        if name in INDICATOR_INDEX:
            return cls(INDICATOR_INDEX[name], name)
        if name in INDICATOR_LABELS:
            i = INDICATOR_LABELS.index(name)
            return cls(i, INDICATORS[i])
        raise DataError(f"unknown indicator {name!r}")


class Category(str, Enum):
    """Class tags. Positional index matches the open-set probability vector."""

    UNKNOWN = "Unknown"
    AD = "AD"
    CN = "CN"

    @property
    def index(self) -> int:
        return _CATEGORY_INDEX[self]

    @classmethod
    def parse(cls, text: str) -> Optional["Category"]:
        text = text.strip()
        if not text:
            return None
        try:
            return cls(text)
        except ValueError:
            raise DataError(f"invalid label {text!r}; expected AD, CN, Unknown or empty") from None


_CATEGORY_INDEX = {Category.UNKNOWN: 0, Category.AD: 1, Category.CN: 2}

# Known categories in activation-vector order.
KNOWN: tuple[Category, ...] = (Category.AD, Category.CN)
OPEN_SET_ORDER: tuple[Category, ...] = (Category.UNKNOWN, Category.AD, Category.CN)


@dataclass(frozen=True)
class SubjectRecord:
    """One visit. ``values`` holds 14 slots in indicator order, ``None`` = missing."""

    subject_id: str
    visit_id: str
    values: tuple[Optional[float], ...]
    label: Optional[Category] = None

    def __post_init__(self):
        if len(self.values) != N_INDICATORS:
            raise DataError(f"record {self.key} has {len(self.values)} values, expected {N_INDICATORS}")
        vals = []
        for name, v in zip(INDICATORS, self.values):
            if v is None:
                vals.append(None)
                continue
            v = float(v)
            if not math.isfinite(v):
                raise DataError(f"record {self.key}: non-finite value for {name}")
            vals.append(v)
        object.__setattr__(self, "values", tuple(vals))
        if self.label is not None and not isinstance(self.label, Category):
            object.__setattr__(self, "label", Category(self.label))

    @property
    def key(self) -> tuple[str, str]:
        return (self.subject_id, self.visit_id)

    @property
    def observed(self) -> np.ndarray:
        return np.array([v is not None for v in self.values], dtype=bool)

    def as_array(self) -> np.ndarray:
        """Values as float array with NaN for missing."""
        return np.array([np.nan if v is None else v for v in self.values], dtype=float)

    def value(self, indicator: str) -> Optional[float]:
        return self.values[INDICATOR_INDEX[indicator]]


@dataclass(frozen=True)
class Dataset:
    records: tuple[SubjectRecord, ...] = ()
    split: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.split not in SPLITS:
            raise DataError(f"invalid split tag {self.split!r}")
        seen = set()
        for r in self.records:
            if r.key in seen:
                raise DataError(f"duplicate visit {r.key[0]},{r.key[1]}")
            seen.add(r.key)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def matrix(self) -> np.ndarray:
        if not self.records:
            return np.empty((0, N_INDICATORS))
        return np.stack([r.as_array() for r in self.records])

    def labels(self) -> list[Optional[Category]]:
        return [r.label for r in self.records]

    def with_label(self, *categories: Category) -> "Dataset":
        return Dataset(tuple(r for r in self.records if r.label in categories), self.split)


def _format_value(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def _parse_value(text: str, column: str, row: int) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row}: column {column!r} is not numeric: {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}: non-finite value in column {column!r}")
    return v


def _check_header(header: Sequence[str]) -> list[str]:
    header = [h.strip() for h in header]
    for col in header:
        if col not in CSV_HEADER:
            raise DataError(f"unknown column {col!r}")
    missing = [c for c in META_COLUMNS if c not in header]
    if missing:
        raise DataError(f"missing required column(s): {', '.join(missing)}")
    if len(set(header)) != len(header):
        raise DataError("duplicate column in header")
    return header


def _read_meta_comment(line: str) -> dict:
    # "# openapmax-dataset format-version=1 split=train"
    meta = {}
    for token in line.lstrip("#").split():
        if "=" in token:
            k, v = token.split("=", 1)
            meta[k] = v
    return meta


def _parse_csv(path: Path) -> Dataset:
    split = "all"
    records = []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body_start = 0
    while body_start < len(lines) and lines[body_start].startswith("#"):
        split = _read_meta_comment(lines[body_start]).get("split", split)
        body_start += 1
    reader = csv.reader(lines[body_start:])
    try:
        header = _check_header(next(reader))
    except StopIteration:
        raise DataError(f"{path}: missing header row") from None
    for lineno, row in enumerate(reader, start=body_start + 2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        cells = dict(zip(header, row))
        values = tuple(
            _parse_value(cells[name], name, lineno) if name in cells else None for name in INDICATORS
        )
        if not cells["subject_id"].strip() or not cells["visit_id"].strip():
            raise DataError(f"row {lineno}: empty subject_id or visit_id")
        try:
            label = Category.parse(cells["label"])
        except DataError as exc:
            raise DataError(f"row {lineno}: {exc}") from None
        records.append(SubjectRecord(cells["subject_id"].strip(), cells["visit_id"].strip(), values, label))
    return Dataset(tuple(records), split)


def _parse_jsonl(path: Path) -> Dataset:
    split = "all"
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"row {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"row {lineno}: expected a JSON object")
            if "format_version" in obj:
                split = obj.get("split", split)
                continue
            for k in obj:
                if k not in CSV_HEADER:
                    raise DataError(f"row {lineno}: unknown column {k!r}")
            if "subject_id" not in obj or "visit_id" not in obj:
                raise DataError(f"row {lineno}: missing subject_id or visit_id")
            values = []
            for name in INDICATORS:
                v = obj.get(name)
                if v is None:
                    values.append(None)
                elif isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise DataError(f"row {lineno}: column {name!r} is not numeric")
                elif not math.isfinite(v):
                    raise DataError(f"row {lineno}: non-finite value in column {name!r}")
                else:
                    values.append(float(v))
            try:
                label = Category.parse(obj.get("label") or "")
            except DataError as exc:
                raise DataError(f"row {lineno}: {exc}") from None
            records.append(SubjectRecord(str(obj["subject_id"]), str(obj["visit_id"]), tuple(values), label))
    return Dataset(tuple(records), split)


def _infer_format(path: Path, fmt: Optional[str]) -> str:
    if fmt:
        if fmt not in ("csv", "json"):
            raise DataError(f"unsupported format {fmt!r}")
        return fmt
    return "json" if path.suffix.lower() in (".json", ".jsonl") else "csv"


def parse_dataset(path, fmt: Optional[str] = None) -> Dataset:
    """Read a dataset file.

    Parameters
    ----------
    path : str or Path
        CSV file (3 meta columns plus indicator columns) or JSON-lines file.
    fmt : {"csv", "json"}, optional
        Inferred from the file suffix when omitted.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if _infer_format(path, fmt) == "json":
        return _parse_jsonl(path)
    return _parse_csv(path)


def write_dataset(ds: Dataset, path, fmt: Optional[str] = None) -> None:
    """Write ``ds`` so that ``parse_dataset`` returns an equal dataset."""
    path = Path(path)
    if _infer_format(path, fmt) == "json":
        with open(path, "w") as fh:
            fh.write(json.dumps({"format_version": FORMAT_VERSION, "split": ds.split}) + "\n")
            for r in ds.records:
                obj = {"subject_id": r.subject_id, "visit_id": r.visit_id}
                if r.label is not None:
                    obj["label"] = r.label.value
                for name, v in zip(INDICATORS, r.values):
                    if v is not None:
                        obj[name] = v
                fh.write(json.dumps(obj) + "\n")
        return
    with open(path, "w", newline="") as fh:
        fh.write(f"# openapmax-dataset format-version={FORMAT_VERSION} split={ds.split}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in ds.records:
            writer.writerow(
                [r.subject_id, r.visit_id, "" if r.label is None else r.label.value]
                + [_format_value(v) for v in r.values]
            )


def _subject_category(records: Iterable[SubjectRecord]) -> Optional[Category]:
    labels = {r.label for r in records}
    if Category.UNKNOWN in labels or None in labels:
        return None
    if len(labels) != 1:
        raise DataError(f"subject {next(iter(records)).subject_id} has visits with conflicting labels")
    return labels.pop()


def split_dataset(
    ds: Dataset, fractions: tuple[float, float, float] = (0.8, 0.05, 0.15), seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Subject-level stratified split into (train, validation, test).

    Subjects with any Unknown-labeled or unlabeled visit go to test in full.
    Known subjects are shuffled per category and cut by ``fractions``.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise DataError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")

    by_subject: dict[str, list[SubjectRecord]] = {}
    for r in ds.records:
        by_subject.setdefault(r.subject_id, []).append(r)

    per_category: dict[Category, list[str]] = {c: [] for c in KNOWN}
    open_subjects = []
    for sid in sorted(by_subject):
        cat = _subject_category(by_subject[sid])
        if cat is None:
            open_subjects.append(sid)
        else:
            per_category[cat].append(sid)
    if sum(len(v) for v in per_category.values()) < 2:
        raise DataError("need at least 2 known-category subjects to split")

    rng = np.random.default_rng(seed)
    assign: dict[str, str] = {sid: "test" for sid in open_subjects}
    for cat in KNOWN:
        sids = per_category[cat]
        order = rng.permutation(len(sids))
        n = len(sids)
        n_train = min(n, int(round(fractions[0] * n)))
        n_val = min(n - n_train, int(round(fractions[1] * n)))
        if fractions[2] == 0:
            n_val = n - n_train if fractions[1] > 0 else 0
            n_train = n - n_val
        for pos, j in enumerate(order):
            if pos < n_train:
                assign[sids[j]] = "train"
            elif pos < n_train + n_val:
                assign[sids[j]] = "validation"
            else:
                assign[sids[j]] = "test"

    parts = {s: [] for s in ("train", "validation", "test")}
    for r in ds.records:
        parts[assign[r.subject_id]].append(r)
    return tuple(Dataset(tuple(parts[s]), s) for s in ("train", "validation", "test"))
