import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openapmax.data_model import INDICATORS, KNOWN, Category, DataError, Dataset
from openapmax.pattern import (
    PATTERN_DIM,
    TABLE1_RANGES,
    AbnormalPattern,
    NormalRange,
    RangeTable,
    binarize,
    estimate_normal_ranges,
    guideline_overrides,
    load_overrides,
    pattern_distance,
    table1_ranges,
)

from conftest import make_record

MMSE = INDICATORS.index("MMSE")
CDRSB = INDICATORS.index("CDRSB")


def _percentile_oracle(values, q):
    # rank (n-1)*q/100 on the sorted list, linear between neighbours
    xs = sorted(values)
    pos = (len(xs) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])


def _train(values_by_cat):
    recs = []
    for cat, rows in values_by_cat.items():
        for i, row in enumerate(rows):
            recs.append(make_record(f"{cat.value}{i}", "v1", cat, **row))
    return Dataset(tuple(recs), "train")


def _full(value_fn, n=100):
    return {cat: [{name: value_fn(i) for name in INDICATORS} for i in range(n)] for cat in KNOWN}


class TestEstimate:
    def test_guideline_override_kept(self):
        ranges = estimate_normal_ranges(_train(_full(lambda i: float(i))))
        r_ad, r_cn = ranges[Category.AD, "MMSE"], ranges[Category.CN, "MMSE"]
        assert (r_ad.low, r_ad.high) == (0.0, 27.0)
        assert (r_cn.low, r_cn.high) == (25.0, 30.0)
        assert r_ad.provenance == "literature"
        assert (ranges[Category.AD, "MOCA"].low, ranges[Category.AD, "MOCA"].high) == (0.0, 23.0)
        assert (ranges[Category.CN, "MOCA"].low, ranges[Category.CN, "MOCA"].high) == (26.0, 30.0)

    def test_constant_sample(self):
        ranges = estimate_normal_ranges(_train(_full(lambda i: 5.0, n=25)), overrides={})
        r = ranges[Category.CN, "CDRSB"]
        assert (r.low, r.high) == (5.0, 5.0)

    def test_one_to_hundred(self):
        values = [float(i) for i in range(1, 101)]
        lo, hi = _percentile_oracle(values, 5), _percentile_oracle(values, 95)
        assert lo == pytest.approx(5.95) and hi == pytest.approx(95.05)
        ranges = estimate_normal_ranges(_train(_full(lambda i: float(i + 1))), overrides={})
        r = ranges[Category.AD, "ADAS11"]
        np.testing.assert_allclose([r.low, r.high], [lo, hi], rtol=0, atol=1e-12)
        assert r.provenance == "statistical"

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=20, max_size=80))
    def test_matches_percentile_oracle(self, values):
        data = {cat: [{"CCI12": v} for v in values] for cat in KNOWN}
        ranges = estimate_normal_ranges(_train(data), overrides={}, fallback=table1_ranges())
        r = ranges[Category.AD, "CCI12"]
        np.testing.assert_allclose(
            [r.low, r.high], [_percentile_oracle(values, 5), _percentile_oracle(values, 95)], rtol=1e-12, atol=1e-9
        )

    def test_insufficient_data_names_entry(self):
        data = _full(lambda i: float(i), n=19)
        with pytest.raises(DataError, match=r"\(AD, Psychiatric\)"):
            estimate_normal_ranges(_train(data))

    def test_fallback_fills_gaps(self):
        ranges = estimate_normal_ranges(_train({Category.AD: [], Category.CN: []}), fallback=table1_ranges())
        assert ranges == RangeTable(table1_ranges())

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-100, 100), st.floats(0, 50))
    def test_override_precedence(self, low, width):
        override = {Category.CN: {"ADAS13": NormalRange(low, low + width, "literature")}}
        ranges = estimate_normal_ranges(_train(_full(lambda i: float(i))), overrides=override)
        r = ranges[Category.CN, "ADAS13"]
        assert (r.low, r.high) == (low, low + width)


class TestRangeTable:
    def test_json_round_trip(self, tmp_path, table1):
        p = tmp_path / "r.json"
        table1.save(p)
        assert RangeTable.load(p) == table1
        assert '"format_version": 1' in p.read_text()

    def test_incomplete_table(self):
        entries = table1_ranges()
        del entries[Category.CN]["MOCA"]
        with pytest.raises(DataError, match="CN, MOCA"):
            RangeTable(entries)

    def test_invalid_range(self):
        with pytest.raises(DataError):
            NormalRange(2.0, 1.0)
        with pytest.raises(DataError):
            NormalRange(0.0, math.inf)

    def test_load_overrides(self, tmp_path):
        p = tmp_path / "o.json"
        p.write_text('{"AD": {"CDRSB": {"low": 1, "high": 9}}}')
        ov = load_overrides(p)
        assert ov[Category.AD]["CDRSB"] == NormalRange(1.0, 9.0, "literature")

    def test_guideline_overrides_are_table1(self):
        ov = guideline_overrides()
        for cat in KNOWN:
            for name in ("MMSE", "MOCA"):
                assert (ov[cat][name].low, ov[cat][name].high) == TABLE1_RANGES[cat][name]


class TestBinarize:
    def test_mmse_29(self, table1):
        p = binarize(make_record(MMSE=29.0), table1)
        assert p.bits[2 * MMSE] == 1 and p.bits[2 * MMSE + 1] == 0

    def test_cdrsb_zero(self, table1):
        p = binarize(make_record(CDRSB=0.0), table1)
        assert p.bits[2 * CDRSB] == 1 and p.bits[2 * CDRSB + 1] == 0

    def test_missing(self, table1):
        p = binarize(make_record(CDRSB=0.0), table1)
        assert p.bits[2 * MMSE] == 0 and p.bits[2 * MMSE + 1] == 0
        assert not p.mask[MMSE] and p.mask[CDRSB]

    @pytest.mark.parametrize("value", [0.0, 27.0])
    def test_bounds_inclusive(self, table1, value):
        p = binarize(make_record(MMSE=value), table1)
        assert p.bits[2 * MMSE] == 0

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.one_of(st.none(), st.floats(-50, 120)), min_size=14, max_size=14),
        st.floats(0, 20),
        st.floats(0, 20),
    )
    def test_widening_only_clears_bits(self, values, grow_lo, grow_hi):
        base = table1_ranges()
        wide = {
            cat: {n: NormalRange(r.low - grow_lo, r.high + grow_hi, r.provenance) for n, r in row.items()}
            for cat, row in base.items()
        }
        rec = make_record(**dict(zip(INDICATORS, values)))
        narrow_bits = binarize(rec, RangeTable(base)).bits
        wide_bits = binarize(rec, RangeTable(wide)).bits
        assert np.all(wide_bits <= narrow_bits)
        mask = binarize(rec, RangeTable(base)).mask
        assert np.all(narrow_bits.reshape(-1, 2)[~mask] == 0)

    def test_order_independent(self, table1):
        rng = np.random.default_rng(0)
        recs = [make_record(f"s{i}", MMSE=float(rng.uniform(0, 30)), MOCA=float(rng.uniform(0, 30))) for i in range(20)]
        first = [binarize(r, table1) for r in recs]
        second = [binarize(r, table1) for r in reversed(recs)][::-1]
        assert first == second


class TestDistance:
    def test_identity(self):
        bits = np.array([1, 0] * 14, dtype=np.uint8)
        p = AbnormalPattern(bits, np.ones(14, bool))
        assert pattern_distance(p, bits.astype(float)) == 0.0

    def test_zeros_vs_ones(self):
        assert pattern_distance(np.zeros(PATTERN_DIM), np.ones(PATTERN_DIM)) == pytest.approx(math.sqrt(28))
        assert math.sqrt(28) == pytest.approx(5.2915, abs=1e-4)

    def test_single_coordinate(self):
        a = np.zeros(PATTERN_DIM)
        a[0] = 1
        assert pattern_distance(a, np.zeros(PATTERN_DIM)) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            pattern_distance(np.zeros(28), np.zeros(27))
