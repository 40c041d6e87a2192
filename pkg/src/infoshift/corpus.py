"""Corpus ingestion, period partitioning, class balancing, splits, and synthesis.

A corpus is a list of :class:`Listing` records plus ingestion diagnostics.
All sampling operations are pure functions of their inputs and an explicit
integer seed; rerunning with the same seed is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

# Binary-period cutoff: listings dated on or after this day are "post".
DEFAULT_CUTOFF = date(2022, 11, 30)

# Half-year bins, chronological. REF covers Jul 1 - Oct 31, 2022; Nov-Dec 2022
# listings are folded into 2023-H1.
REF_BIN = "REF"
HALFYEAR_RANGE = (date(2019, 1, 1), date(2025, 6, 30))
HALFYEAR_BINS = (
    "2019-H1", "2019-H2", "2020-H1", "2020-H2", "2021-H1", "2021-H2",
    "2022-H1", REF_BIN, "2023-H1", "2023-H2", "2024-H1", "2024-H2", "2025-H1",
)

SPLIT_NAMES = ("train", "validation", "test")
DEFAULT_SPLIT_RATIOS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class Listing:
    """One corpus record: free text plus the listing-level attributes used as controls."""

    id: str
    title: str
    description: str
    listed_date: date
    price_usd: float = 0.0
    shop_reviews: int = 0
    item_reviews: int = 0
    rating: float | None = None
    has_discount: bool = False
    category: str | None = None

    def text(self, fields: tuple[str, ...] = ("title", "description")) -> str:
        """Model input text: the requested fields joined by a newline."""
        parts = [getattr(self, f) for f in fields]
        return "\n".join(p for p in parts if p)

    @property
    def word_count(self) -> int:
        """Whitespace-delimited token count of title plus description."""
        return len(self.text().split())

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "listed_date": self.listed_date.isoformat(),
            "price_usd": self.price_usd,
            "shop_reviews": self.shop_reviews,
            "item_reviews": self.item_reviews,
            "has_discount": self.has_discount,
        }
        if self.rating is not None:
            d["rating"] = self.rating
        if self.category is not None:
            d["category"] = self.category
        return d


@dataclass(frozen=True)
class LabelRecord:
    """Machine decision for one listing under a given labeler/prompt/token pair."""

    listing_id: str
    label: int
    token_pair: tuple[str, str] = ("SELECT", "PASS")
    prompt_id: str = "custom"
    labeler_id: str = "unknown"

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise DataError(f"label for {self.listing_id!r} must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class PeriodAssignment:
    listing_id: str
    period: str  # "pre" | "post"
    halfyear_bin: str | None = None


@dataclass(frozen=True)
class SplitAssignment:
    listing_id: str
    split: str
    seed: int


@dataclass
class Corpus:
    """Ingested listings plus row-level diagnostics."""

    listings: list[Listing]
    n_read: int = 0
    n_skipped: int = 0
    n_duplicates: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.listings)

    def by_id(self) -> dict[str, Listing]:
        return {lst.id: lst for lst in self.listings}


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

_REQUIRED_NUMERIC_DEFAULTS = {
    "price_usd": 0.0,
    "shop_reviews": 0,
    "item_reviews": 0,
}


def _parse_row(row: dict, line_no: int) -> Listing:
    listing_id = str(row.get("id", "") or "").strip()
    if not listing_id:
        raise DataError(f"line {line_no}: missing id")
    title = str(row.get("title", "") or "")
    description = str(row.get("description", "") or "")
    if not title.strip() and not description.strip():
        raise DataError(f"line {line_no}: listing {listing_id!r} has no text")
    raw_date = str(row.get("listed_date", "") or "")
    try:
        listed = date.fromisoformat(raw_date)
    except ValueError as exc:
        raise DataError(f"line {line_no}: bad listed_date {raw_date!r}") from exc

    def _num(key: str, cast, default):
        raw = row.get(key, None)
        if raw is None or raw == "":
            return default
        try:
            value = cast(raw)
        except (TypeError, ValueError) as exc:
            raise DataError(f"line {line_no}: bad {key} {raw!r}") from exc
        if value < 0:
            raise DataError(f"line {line_no}: negative {key} {value!r}")
        return value

    price = _num("price_usd", float, 0.0)
    shop_reviews = int(_num("shop_reviews", float, 0))
    item_reviews = int(_num("item_reviews", float, 0))
    rating_raw = row.get("rating", None)
    rating: float | None
    if rating_raw is None or rating_raw == "":
        rating = None
    else:
        rating = float(rating_raw)
        if not 0.0 <= rating <= 5.0:
            raise DataError(f"line {line_no}: rating {rating} outside [0, 5]")
    discount_raw = row.get("has_discount", False)
    if isinstance(discount_raw, str):
        has_discount = discount_raw.strip().lower() in ("1", "true", "yes")
    else:
        has_discount = bool(discount_raw)
    category_raw = row.get("category", None)
    category = str(category_raw) if category_raw not in (None, "") else None
    return Listing(
        id=listing_id,
        title=title,
        description=description,
        listed_date=listed,
        price_usd=price,
        shop_reviews=shop_reviews,
        item_reviews=item_reviews,
        rating=rating,
        has_discount=has_discount,
        category=category,
    )


def _iter_rows(path: Path, fmt: str):
    if fmt == "jsonl":
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield line_no, json.loads(line)
                except json.JSONDecodeError as exc:
                    yield line_no, DataError(f"line {line_no}: invalid JSON ({exc.msg})")
    elif fmt == "csv":
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for line_no, row in enumerate(reader, start=2):
                yield line_no, row
    else:
        raise ConfigError(f"unknown corpus format {fmt!r} (expected 'jsonl' or 'csv')")


def ingest(path: str | Path, fmt: str = "jsonl", max_skip_fraction: float = 0.10) -> Corpus:
    """Read a corpus file, skipping malformed rows with diagnostics.

    Raises DataError if the file is unreadable or more than
    ``max_skip_fraction`` of rows had to be skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"corpus file not found: {path}")
    listings: list[Listing] = []
    seen: set[str] = set()
    diagnostics: list[str] = []
    n_read = 0
    n_skipped = 0
    n_duplicates = 0
    for line_no, row in _iter_rows(path, fmt):
        n_read += 1
        if isinstance(row, DataError):
            n_skipped += 1
            diagnostics.append(str(row))
            continue
        try:
            listing = _parse_row(row, line_no)
        except DataError as exc:
            n_skipped += 1
            diagnostics.append(str(exc))
            continue
        if listing.id in seen:
            n_duplicates += 1
            diagnostics.append(f"line {line_no}: duplicate id {listing.id!r} rejected")
            continue
        seen.add(listing.id)
        listings.append(listing)
    if n_read == 0:
        raise DataError(f"corpus file {path} is empty")
    # duplicates are rejected but do not count toward the malformed-row breaker
    if n_skipped > max_skip_fraction * n_read:
        raise DataError(
            f"{n_skipped}/{n_read} rows skipped (> {max_skip_fraction:.0%}); "
            f"first diagnostics: {diagnostics[:3]}"
        )
    for diag in diagnostics:
        logger.warning("ingest: %s", diag)
    return Corpus(listings=listings, n_read=n_read, n_skipped=n_skipped,
                  n_duplicates=n_duplicates, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Period partitioning
# ---------------------------------------------------------------------------

def halfyear_bin_for(d: date) -> str | None:
    """Half-year bin for a date, or None when outside the configured range."""
    lo, hi = HALFYEAR_RANGE
    if d < lo or d > hi:
        return None
    if d.year == 2022:
        if d.month <= 6:
            return "2022-H1"
        if d.month <= 10:
            return REF_BIN
        return "2023-H1"  # Nov-Dec 2022 fold into the next period
    half = "H1" if d.month <= 6 else "H2"
    return f"{d.year}-{half}"


def partition(
    corpus: Corpus,
    cutoff: date = DEFAULT_CUTOFF,
    scheme: str = "binary",
) -> tuple[list[PeriodAssignment], list[str]]:
    """Assign each listing to a period (and half-year bin when requested).

    The cutoff is inclusive on the post side: period == "post" iff
    listed_date >= cutoff. In the halfyear scheme, listings outside the
    supported bin range are excluded with a diagnostic.
    """
    if scheme not in ("binary", "halfyear"):
        raise ConfigError(f"unknown partition scheme {scheme!r}")
    assignments: list[PeriodAssignment] = []
    diagnostics: list[str] = []
    for lst in corpus.listings:
        period = "post" if lst.listed_date >= cutoff else "pre"
        if scheme == "binary":
            assignments.append(PeriodAssignment(lst.id, period))
            continue
        hy = halfyear_bin_for(lst.listed_date)
        if hy is None:
            diagnostics.append(
                f"listing {lst.id!r} dated {lst.listed_date} outside half-year range, excluded"
            )
            continue
        assignments.append(PeriodAssignment(lst.id, period, hy))
    for diag in diagnostics:
        logger.warning("partition: %s", diag)
    return assignments, diagnostics


# ---------------------------------------------------------------------------
# Balancing and splitting
# ---------------------------------------------------------------------------

def balance(
    corpus: Corpus,
    labels: dict[str, int],
    groups: dict[str, str],
    seed: int,
) -> list[str]:
    """Downsample the majority class within each group to a 1:1 ratio.

    ``groups`` maps listing id to its group key (period or bin). Listings not
    present in ``groups`` were excluded upstream and are ignored. Returns kept
    listing ids in corpus order. A group missing one class entirely is fatal.
    """
    missing = [lst.id for lst in corpus.listings if lst.id in groups and lst.id not in labels]
    if missing:
        raise DataError(f"labels missing for {len(missing)} listings (first: {missing[:3]})")
    per_group: dict[str, tuple[list[str], list[str]]] = {}
    for lst in corpus.listings:
        gid = groups.get(lst.id)
        if gid is None:
            continue
        pos, neg = per_group.setdefault(gid, ([], []))
        (pos if labels[lst.id] == 1 else neg).append(lst.id)

    kept: set[str] = set()
    for idx, gid in enumerate(sorted(per_group)):
        pos, neg = per_group[gid]
        if not pos or not neg:
            raise DataError(f"group {gid!r} has an empty class (pos={len(pos)}, neg={len(neg)})")
        target = min(len(pos), len(neg))
        rng = np.random.default_rng([seed, idx])
        for ids in (pos, neg):
            if len(ids) == target:
                kept.update(ids)
            else:
                chosen = rng.choice(len(ids), size=target, replace=False)
                kept.update(ids[i] for i in chosen)
    return [lst.id for lst in corpus.listings if lst.id in kept]


def _apportion(n: int, ratios: tuple[float, ...]) -> list[int]:
    """Floor-then-largest-remainder apportionment; ties resolved by position."""
    exact = [n * r for r in ratios]
    counts = [math.floor(e) for e in exact]
    leftover = n - sum(counts)
    remainders = sorted(
        range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i)
    )
    for i in remainders[:leftover]:
        counts[i] += 1
    return counts


def _split_sort_key(seed: int, listing_id: str) -> str:
    digest = hashlib.sha256(f"{seed}:{listing_id}".encode("utf-8")).hexdigest()
    return digest


def split(
    ids: list[str],
    seed: int,
    ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
) -> dict[str, str]:
    """Assign train/validation/test splits with exact apportioned counts.

    Listings are ordered by a seeded per-id hash, then quota-filled in split
    order. The per-id ordering keeps assignments nearly stable under small
    corpus perturbations while preserving exact counts.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    if len(ids) < 10:
        raise DataError(f"corpus of {len(ids)} too small to populate all splits (need >= 10)")
    if len(set(ids)) != len(ids):
        raise DataError("duplicate ids passed to split()")
    counts = _apportion(len(ids), ratios)
    ordered = sorted(ids, key=lambda i: _split_sort_key(seed, i))
    out: dict[str, str] = {}
    start = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for listing_id in ordered[start:start + count]:
            out[listing_id] = name
        start += count
    return out


# ---------------------------------------------------------------------------
# Synthetic planted-signal corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantedSignalSpec:
    """Recipe for a synthetic corpus whose post-period labels track a marker token.

    Pre-period labels are independent fair coin flips. Post-period labels
    equal marker presence XOR Bernoulli(flip_prob); the marker appears in
    exactly half of the post listings. Filler tokens are drawn independently
    of the labels, so the marker is the only signal.
    """

    n_per_period: int = 10_000
    marker_token: str = "zephyrine"
    flip_prob: float = 0.1
    vocab_size: int = 200
    tokens_min: int = 8
    tokens_max: int = 24
    pre_dates: tuple[date, date] = (date(2022, 7, 1), date(2022, 10, 31))
    post_dates: tuple[date, date] = (date(2023, 1, 1), date(2023, 6, 30))
    categories: tuple[str, ...] = ("anemone", "birch", "clover", "dahlia")


def _random_date(rng: np.random.Generator, lo: date, hi: date) -> date:
    span = (hi - lo).days
    return lo + timedelta(days=int(rng.integers(0, span + 1)))


def synthesize(spec: PlantedSignalSpec, seed: int) -> tuple[Corpus, list[LabelRecord]]:
    """Generate a planted-signal corpus and its labels deterministically."""
    if not 0.0 <= spec.flip_prob < 0.5:
        raise ConfigError(f"flip_prob must be in [0, 0.5), got {spec.flip_prob}")
    if spec.vocab_size < 2:
        raise ConfigError("vocab_size must be at least 2")
    rng = np.random.default_rng(seed)
    vocab = np.array([f"w{i:03d}" for i in range(spec.vocab_size)])
    if spec.marker_token in vocab:
        raise ConfigError("marker_token collides with the filler vocabulary")

    listings: list[Listing] = []
    labels: list[LabelRecord] = []

    def _attrs() -> dict:
        rating = float(np.clip(rng.normal(4.8, 0.3), 0.0, 5.0))
        return {
            "price_usd": round(float(np.exp(rng.normal(3.5, 1.0))), 2),
            "shop_reviews": int(np.exp(rng.normal(4.0, 2.0))),
            "item_reviews": int(rng.poisson(2)),
            "rating": round(rating, 2) if rng.random() > 0.05 else None,
            "has_discount": bool(rng.random() < 0.3),
            "category": str(rng.choice(np.asarray(spec.categories))),
        }

    def _make(listing_id: str, with_marker: bool, lo: date, hi: date) -> Listing:
        k = int(rng.integers(spec.tokens_min, spec.tokens_max + 1))
        tokens = list(rng.choice(vocab, size=k))
        if with_marker:
            pos = int(rng.integers(0, len(tokens) + 1))
            tokens.insert(pos, spec.marker_token)
        title = " ".join(tokens[:3])
        description = " ".join(tokens[3:])
        return Listing(
            id=listing_id,
            title=title,
            description=description,
            listed_date=_random_date(rng, lo, hi),
            **_attrs(),
        )

    n = spec.n_per_period
    for i in range(n):
        lst = _make(f"pre-{i:06d}", False, *spec.pre_dates)
        listings.append(lst)
        labels.append(LabelRecord(lst.id, int(rng.integers(0, 2)), labeler_id="synthetic"))

    marker_flags = np.zeros(n, dtype=bool)
    marker_flags[: n // 2] = True
    rng.shuffle(marker_flags)
    for i in range(n):
        lst = _make(f"post-{i:06d}", bool(marker_flags[i]), *spec.post_dates)
        listings.append(lst)
        flipped = bool(rng.random() < spec.flip_prob)
        label = int(marker_flags[i]) ^ int(flipped)
        labels.append(LabelRecord(lst.id, label, labeler_id="synthetic"))

    return Corpus(listings=listings, n_read=len(listings)), labels


def true_post_information(flip_prob: float) -> float:
    """Analytic usable information of a planted-signal post period, in bits."""
    p = flip_prob
    if p == 0.0:
        return 1.0
    return 1.0 + p * math.log2(p) + (1.0 - p) * math.log2(1.0 - p)


# ---------------------------------------------------------------------------
# File I/O for the external interfaces
# ---------------------------------------------------------------------------

def write_corpus(listings: list[Listing], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for lst in listings:
            fh.write(json.dumps(lst.to_dict(), sort_keys=True) + "\n")


def write_labels(labels: list[LabelRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in labels:
            fh.write(json.dumps({
                "listing_id": rec.listing_id,
                "label": rec.label,
                "labeler_id": rec.labeler_id,
                "prompt_id": rec.prompt_id,
            }, sort_keys=True) + "\n")


def read_labels(
    path: str | Path,
    token_pair: tuple[str, str] = ("SELECT", "PASS"),
) -> list[LabelRecord]:
    """Read a label file; labels may be 0/1 or one of the two tokens."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"label file not found: {path}")
    records: list[LabelRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"label file line {line_no}: invalid JSON ({exc.msg})") from exc
            raw = row.get("label")
            if raw in (0, 1):
                label = int(raw)
            elif isinstance(raw, str) and raw in token_pair:
                label = 1 if raw == token_pair[0] else 0
            else:
                raise DataError(
                    f"label file line {line_no}: label {raw!r} is neither 0/1 nor in {token_pair}"
                )
            records.append(LabelRecord(
                listing_id=str(row.get("listing_id", "")),
                label=label,
                token_pair=token_pair,
                prompt_id=str(row.get("prompt_id", "custom")),
                labeler_id=str(row.get("labeler_id", "unknown")),
            ))
    return records


def write_assignments(rows: list[tuple[str, ...]], header: tuple[str, ...], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_assignments(path: str | Path) -> list[dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"assignment file not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
