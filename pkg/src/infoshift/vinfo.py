"""Usable-information estimation from paired null/content log scores.

Per-example pointwise usable information (in bits) is the content model's
log2 score minus the null model's log2 score on the true label. Its sample
mean over an evaluation set estimates the usable information of that set,
and equals the difference between the estimated entropy and conditional
entropy exactly.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .family import PROB_CLAMP

logger = logging.getLogger(__name__)

# One clamped log score is bounded by |log2(1e-6)| ~ 19.93 bits; the
# difference of two is bounded by twice that.
PVI_BOUND = 2.0 * abs(math.log2(PROB_CLAMP))


@dataclass(frozen=True)
class PviRecord:
    listing_id: str
    log2p_null: float
    log2p_content: float
    pvi: float
    period: str = ""
    halfyear_bin: str = ""
    split: str = ""


@dataclass(frozen=True)
class InfoEstimate:
    """Sample estimates (empirical means, not family infima) with support size and SE."""

    v_entropy: float
    conditional_v_entropy: float
    v_information: float
    n: int
    standard_error: float
    weighted_flag: bool = False


def pvi(log2p_null: float, log2p_content: float) -> float:
    """Pointwise usable information in bits; negative when the input hurts."""
    if not (math.isfinite(log2p_null) and math.isfinite(log2p_content)):
        raise DataError(f"non-finite log scores: null={log2p_null}, content={log2p_content}")
    if log2p_null > 0 or log2p_content > 0:
        raise DataError(f"log2 probabilities must be <= 0: null={log2p_null}, content={log2p_content}")
    return -log2p_null + log2p_content


def make_record(
    listing_id: str,
    log2p_null: float,
    log2p_content: float,
    period: str = "",
    halfyear_bin: str = "",
    split: str = "",
) -> PviRecord:
    return PviRecord(
        listing_id=listing_id,
        log2p_null=log2p_null,
        log2p_content=log2p_content,
        pvi=pvi(log2p_null, log2p_content),
        period=period,
        halfyear_bin=halfyear_bin,
        split=split,
    )


def estimate(records: list[PviRecord], weighted_flag: bool = False) -> InfoEstimate:
    """Mean-based information estimate over one evaluation set.

    All records must come from a single split (mixing splits mixes
    distributions and silently biases the estimate).
    """
    if not records:
        raise DataError("estimate() requires at least one record")
    splits = {r.split for r in records}
    if len(splits) > 1:
        raise DataError(f"records span multiple splits {sorted(splits)}; estimate one split at a time")
    values = np.array([r.pvi for r in records])
    null_bits = np.array([-r.log2p_null for r in records])
    content_bits = np.array([-r.log2p_content for r in records])
    v_entropy = float(np.mean(null_bits))
    conditional = float(np.mean(content_bits))
    n = len(records)
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return InfoEstimate(
        v_entropy=v_entropy,
        conditional_v_entropy=conditional,
        v_information=v_entropy - conditional,
        n=n,
        standard_error=se,
        weighted_flag=weighted_flag,
    )


# ---------------------------------------------------------------------------
# Distribution summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HistogramBin:
    lo: float
    hi: float
    period: str
    mass: float


DEFAULT_HISTOGRAM_PROBS = tuple(i / 10 for i in range(1, 10))
UPPER_EDGES = (0.9, 0.99)


def histogram(
    records: list[PviRecord],
    probs: tuple[float, ...] = DEFAULT_HISTOGRAM_PROBS,
) -> tuple[list[HistogramBin], list[str]]:
    """Within-period mass fractions over pooled-quantile bins.

    Bin edges are pooled-sample quantiles at ``probs`` below 0.9, plus the
    fixed upper bins [0.9, 0.99) and [0.99, inf). Masses sum to 1 per period.
    """
    n_bins = len(probs) + len(UPPER_EDGES) + 1
    if len(records) < 5 * n_bins:
        raise DataError(f"histogram needs at least {5 * n_bins} records, got {len(records)}")
    pooled = np.array([r.pvi for r in records])
    diagnostics: list[str] = []
    periods = sorted({r.period for r in records})
    if float(pooled.min()) == float(pooled.max()):
        diagnostics.append("degenerate pooled distribution (all values equal); single-bin output")
        logger.warning("histogram: %s", diagnostics[-1])
        return [HistogramBin(-math.inf, math.inf, p, 1.0) for p in periods], diagnostics
    quantiles = np.quantile(pooled, probs)
    inner = sorted({float(q) for q in quantiles if q < UPPER_EDGES[0]})
    edges = np.array([-math.inf, *inner, *UPPER_EDGES, math.inf])
    bins: list[HistogramBin] = []
    for period in periods:
        values = np.array([r.pvi for r in records if r.period == period])
        counts, _ = np.histogram(values, bins=edges)
        masses = counts / values.size
        for i, mass in enumerate(masses):
            bins.append(HistogramBin(float(edges[i]), float(edges[i + 1]), period, float(mass)))
    return bins, diagnostics


@dataclass(frozen=True)
class GroupMean:
    group: str
    mean: float
    sd: float
    n: int
    low_support: bool


_GROUP_KEYS = {"period", "halfyear_bin", "split"}


def mean_by_group(
    records: list[PviRecord],
    grouping: str,
    floor: int = 5,
) -> list[GroupMean]:
    """Per-group mean/SD/n of pointwise values; small groups are flagged."""
    if grouping not in _GROUP_KEYS:
        raise DataError(f"unknown grouping key {grouping!r} (expected one of {sorted(_GROUP_KEYS)})")
    by_group: dict[str, list[float]] = {}
    for r in records:
        by_group.setdefault(getattr(r, grouping), []).append(r.pvi)
    out = []
    for group in sorted(by_group):
        values = np.array(by_group[group])
        sd = float(np.std(values, ddof=1)) if values.size > 1 else math.nan
        out.append(GroupMean(
            group=group,
            mean=float(np.mean(values)),
            sd=sd,
            n=values.size,
            low_support=values.size < floor,
        ))
    return out


# ---------------------------------------------------------------------------
# Delimited record files
# ---------------------------------------------------------------------------

PVI_COLUMNS = ("listing_id", "log2p_null", "log2p_content", "pvi", "period", "halfyear_bin", "split")


def write_records(records: list[PviRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PVI_COLUMNS)
        for r in records:
            writer.writerow([
                r.listing_id, repr(r.log2p_null), repr(r.log2p_content), repr(r.pvi),
                r.period, r.halfyear_bin, r.split,
            ])


def read_records(path: str | Path) -> list[PviRecord]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"record file not found: {path}")
    out: list[PviRecord] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(PviRecord(
                listing_id=row["listing_id"],
                log2p_null=float(row["log2p_null"]),
                log2p_content=float(row["log2p_content"]),
                pvi=float(row["pvi"]),
                period=row.get("period", ""),
                halfyear_bin=row.get("halfyear_bin", ""),
                split=row.get("split", ""),
            ))
    return out


def write_histogram(bins: list[HistogramBin], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("bin_lo", "bin_hi", "period", "mass"))
        for b in bins:
            writer.writerow([repr(b.lo), repr(b.hi), b.period, repr(b.mass)])
