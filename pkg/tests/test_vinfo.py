"""Pointwise information arithmetic, estimates, histograms, group means."""

from __future__ import annotations

import math

import numpy as np
import pytest

from infoshift.errors import DataError
from infoshift.vinfo import (
    PviRecord, estimate, histogram, make_record, mean_by_group, pvi, read_records,
    write_records,
)


def _rec(value_null: float, value_content: float, **kw) -> PviRecord:
    return make_record("x", value_null, value_content, **kw)


def test_pvi_identical_models_zero():
    assert pvi(-1.0, -1.0) == 0.0


def test_pvi_direct_arithmetic():
    assert pvi(-2.0, -1.0) == 1.0


def test_pvi_can_be_negative():
    assert pvi(-1.0, -3.0) == -2.0


def test_pvi_nonfinite_fatal():
    with pytest.raises(DataError):
        pvi(float("nan"), -1.0)
    with pytest.raises(DataError):
        pvi(-1.0, float("-inf"))
    with pytest.raises(DataError):
        pvi(0.5, -1.0)


# -- estimate -----------------------------------------------------------------

def test_estimate_mean_of_two():
    records = [
        make_record("a", -1.0, -1.0, split="test"),
        make_record("b", -2.0, -1.0, split="test"),
    ]
    est = estimate(records)
    assert est.v_information == pytest.approx(0.5, abs=1e-15)
    assert est.n == 2


def test_estimate_identity_exact(rng):
    # estimator identity: mean(pointwise) equals entropy difference to 1e-12
    for _ in range(25):
        n = int(rng.integers(2, 400))
        nulls = -rng.exponential(1.0, size=n)
        contents = -rng.exponential(1.0, size=n)
        records = [make_record(f"r{i}", float(nulls[i]), float(contents[i]), split="test")
                   for i in range(n)]
        est = estimate(records)
        assert abs(est.v_information - np.mean([r.pvi for r in records])) <= 1e-12
        assert abs(est.v_information - (est.v_entropy - est.conditional_v_entropy)) <= 1e-12


def test_estimate_mixed_splits_fatal():
    records = [
        make_record("a", -1.0, -1.0, split="test"),
        make_record("b", -1.0, -1.0, split="validation"),
    ]
    with pytest.raises(DataError, match="split"):
        estimate(records)


def test_estimate_empty_fatal():
    with pytest.raises(DataError):
        estimate([])


def test_estimate_standard_error():
    values = [0.0, 1.0, 2.0, 3.0]
    records = [make_record(f"r{i}", -6.0, -6.0 + v, split="test") for i, v in enumerate(values)]
    est = estimate(records)
    assert est.standard_error == pytest.approx(np.std(values, ddof=1) / 2.0, abs=1e-12)


# -- histogram -----------------------------------------------------------------

def _records_from_values(values, period):
    # keep both log scores <= 0 while the pointwise value equals v exactly
    return [make_record(f"{period}{i}", -6.0, -6.0 + v, period=period, split="test")
            for i, v in enumerate(values)]


def test_histogram_degenerate_single_bin():
    records = _records_from_values([0.5] * 70, "pre")
    bins, diagnostics = histogram(records)
    assert len(bins) == 1
    assert bins[0].mass == 1.0
    assert diagnostics


def test_histogram_identical_periods_identical_histograms(rng):
    values = list(rng.normal(0.4, 0.3, size=300))
    records = _records_from_values(values, "pre") + _records_from_values(values, "post")
    bins, _ = histogram(records)
    pre = [(b.lo, b.hi, b.mass) for b in bins if b.period == "pre"]
    post = [(b.lo, b.hi, b.mass) for b in bins if b.period == "post"]
    assert pre == post


def test_histogram_uniform_decile_masses(rng):
    # order-statistics oracle: on a uniform sample, each quantile-delimited bin
    # holds its nominal mass exactly up to quantile interpolation on the grid
    values = list(rng.uniform(0.0, 1.0, size=5000))
    records = _records_from_values(values, "pre")
    bins, _ = histogram(records)
    pre = [b for b in bins if b.period == "pre"]
    arr = np.array(values)
    for b in pre:
        expected = float(np.mean((arr >= b.lo) & (arr < b.hi)))
        assert b.mass == pytest.approx(expected, abs=1e-12)
    # deciles below 0.9 carry ~0.1 each; the fixed upper bins carry ~0.09 / ~0.01
    decile_bins = [b for b in pre if math.isfinite(b.lo) and b.hi <= 0.9]
    for b in decile_bins:
        assert abs(b.mass - 0.1) < 0.02
    assert abs(pre[-2].mass - 0.09) < 0.02
    assert abs(pre[-1].mass - 0.01) < 0.01


def test_histogram_mass_sums_to_one_per_period(rng):
    records = (_records_from_values(rng.normal(0, 1, 200), "pre")
               + _records_from_values(rng.normal(0.5, 1, 300), "post"))
    bins, _ = histogram(records)
    for period in ("pre", "post"):
        total = sum(b.mass for b in bins if b.period == period)
        assert abs(total - 1.0) < 1e-9


def test_histogram_fixed_upper_bins_present(rng):
    records = _records_from_values(rng.uniform(0, 1.2, size=400), "pre")
    bins, _ = histogram(records)
    uppers = [(b.lo, b.hi) for b in bins if b.lo in (0.9, 0.99)]
    assert (0.9, 0.99) in uppers
    assert any(b.lo == 0.99 and not math.isfinite(b.hi) for b in bins)


def test_histogram_too_few_records_fatal():
    with pytest.raises(DataError, match="at least"):
        histogram(_records_from_values([0.1, 0.2, 0.3], "pre"))


# -- group means -------------------------------------------------------------------

def test_mean_by_group_arithmetic():
    records = (_records_from_values([0.0, 1.0], "a") + _records_from_values([1.0, 2.0], "b"))
    rows = mean_by_group(records, "period", floor=2)
    by_group = {r.group: r for r in rows}
    assert by_group["a"].mean == pytest.approx(0.5)
    assert by_group["b"].mean == pytest.approx(1.5)


def test_mean_by_group_single_group_matches_estimate(rng):
    values = list(rng.normal(0.3, 0.2, size=50))
    records = _records_from_values(values, "only")
    rows = mean_by_group(records, "period")
    assert rows[0].mean == pytest.approx(estimate(records).v_information, abs=1e-12)


def test_mean_by_group_low_support_flag():
    records = _records_from_values([1.0], "tiny") + _records_from_values([0.1] * 10, "big")
    rows = mean_by_group(records, "period", floor=5)
    flags = {r.group: r.low_support for r in rows}
    assert flags == {"tiny": True, "big": False}


def test_mean_by_group_unknown_key_fatal():
    with pytest.raises(DataError):
        mean_by_group(_records_from_values([0.1], "a"), "nonsense")


# -- record files ---------------------------------------------------------------------

def test_record_file_roundtrip(tmp_path, rng):
    records = [
        make_record(f"r{i}", float(-rng.exponential()), float(-rng.exponential()),
                    period="pre", halfyear_bin="2022-H1", split="test")
        for i in range(20)
    ]
    path = tmp_path / "records.csv"
    write_records(records, path)
    loaded = read_records(path)
    assert loaded == records
