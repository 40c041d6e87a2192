"""Counterfactual token ablation: remove a lexicon token from the listings
containing it, rescore with the unmodified models, and report the mean change
in pointwise usable information.

Rescoring modified text with models fitted on the original distribution is an
approximation (the intervention changes the distribution, and no retraining
occurs); reports must label it as such.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .family import FittedModel, tokenize
from .vinfo import pvi

logger = logging.getLogger(__name__)

DEFAULT_SUPPORT_FLOOR = 25
POLARITIES = ("+", "-", "0")
LEXICON_SOURCES = ("O", "V", "E")


@dataclass(frozen=True)
class LexiconEntry:
    token: str
    polarity: str = "0"
    sources: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.token or any(ch.isspace() for ch in self.token):
            raise DataError(f"lexicon token must be nonempty with no whitespace: {self.token!r}")
        if self.polarity not in POLARITIES:
            raise DataError(f"lexicon polarity must be one of {POLARITIES}: {self.polarity!r}")


def load_lexicon(path: str | Path) -> tuple[list[LexiconEntry], list[str]]:
    """Read a delimited lexicon {token, polarity, sources}; bad rows are skipped."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"lexicon file not found: {path}")
    entries: list[LexiconEntry] = []
    diagnostics: list[str] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8", newline="") as fh:
        for line_no, row in enumerate(csv.DictReader(fh), start=2):
            token = (row.get("token") or "").strip().lower()
            sources = frozenset(s for s in (row.get("sources") or "").split("|") if s)
            try:
                entry = LexiconEntry(token, (row.get("polarity") or "0").strip() or "0", sources)
            except DataError as exc:
                diagnostics.append(f"lexicon line {line_no}: {exc}")
                continue
            if entry.token in seen:
                diagnostics.append(f"lexicon line {line_no}: duplicate token {entry.token!r}")
                continue
            seen.add(entry.token)
            entries.append(entry)
    for diag in diagnostics:
        logger.warning("load_lexicon: %s", diag)
    return entries, diagnostics


_SPACE_RUNS = re.compile(r"[ \t]{2,}")
_SPACE_AROUND_NEWLINE = re.compile(r"[ \t]*\n[ \t]*")


def remove_token(text: str, token: str) -> str:
    """Remove all case-insensitive word-boundary occurrences; collapse spacing."""
    pattern = re.compile(rf"\b{re.escape(token)}\b", re.IGNORECASE)
    out = pattern.sub("", text)
    out = _SPACE_RUNS.sub(" ", out)
    out = _SPACE_AROUND_NEWLINE.sub("\n", out)
    return out.strip(" \t")


@dataclass(frozen=True)
class AblationRecord:
    token: str
    n_support: int
    mean_pvi_with: float
    mean_pvi_without: float
    delta_pvi: float
    pos_gold: float
    pos_pred: float
    pos_pred_without: float
    excluded: bool
    polarity: str = "0"
    sources: frozenset[str] = frozenset()


@dataclass(frozen=True)
class AblationSlice:
    """One evaluation listing with its period-matched model pair."""

    listing_id: str
    text: str
    label: int
    content_model: FittedModel
    null_model: FittedModel


def _excluded_record(entry: LexiconEntry, n_support: int = 0) -> AblationRecord:
    return AblationRecord(
        token=entry.token,
        n_support=n_support,
        mean_pvi_with=math.nan,
        mean_pvi_without=math.nan,
        delta_pvi=math.nan,
        pos_gold=math.nan,
        pos_pred=math.nan,
        pos_pred_without=math.nan,
        excluded=True,
        polarity=entry.polarity,
        sources=entry.sources,
    )


def ablate(
    entry: LexiconEntry | str,
    rows: list[AblationSlice],
    floor: int = DEFAULT_SUPPORT_FLOOR,
) -> AblationRecord:
    """Ablate one token over the slice; records below the support floor are excluded."""
    if isinstance(entry, str):
        entry = LexiconEntry(entry)
    support = [r for r in rows if entry.token in set(tokenize(r.text))]
    return _ablate_support(entry, support, floor)


def _ablate_support(
    entry: LexiconEntry,
    support: list[AblationSlice],
    floor: int,
) -> AblationRecord:
    if not support:
        return _excluded_record(entry)
    pvis_with, pvis_without = [], []
    pred_with, pred_without = [], []
    gold = []
    for r in support:
        modified = remove_token(r.text, entry.token)
        orig = r.content_model.score(r.text)
        mod = r.content_model.score(modified)
        null = r.null_model.score(r.text)
        pvis_with.append(pvi(null.log2_prob[r.label], orig.log2_prob[r.label]))
        pvis_without.append(pvi(null.log2_prob[r.label], mod.log2_prob[r.label]))
        pred_with.append(1 if orig.log2_prob[1] >= orig.log2_prob[0] else 0)
        pred_without.append(1 if mod.log2_prob[1] >= mod.log2_prob[0] else 0)
        gold.append(r.label)
    n = len(support)
    mean_with = float(np.mean(pvis_with))
    mean_without = float(np.mean(pvis_without))
    return AblationRecord(
        token=entry.token,
        n_support=n,
        mean_pvi_with=mean_with,
        mean_pvi_without=mean_without,
        delta_pvi=mean_with - mean_without,
        pos_gold=float(np.mean(gold)),
        pos_pred=float(np.mean(pred_with)),
        pos_pred_without=float(np.mean(pred_without)),
        excluded=n < floor,
        polarity=entry.polarity,
        sources=entry.sources,
    )


def ablate_many(
    entries: list[LexiconEntry],
    rows: list[AblationSlice],
    floor: int = DEFAULT_SUPPORT_FLOOR,
    threads: int = 1,
) -> list[AblationRecord]:
    """Ablate each lexicon entry independently; order follows the lexicon.

    Support sets come from a shared inverted index over the tokenized slice,
    so each token only scores the listings that actually contain it.
    """
    index: dict[str, list[int]] = {}
    for i, row in enumerate(rows):
        for tok in set(tokenize(row.text)):
            index.setdefault(tok, []).append(i)

    def run(entry: LexiconEntry) -> AblationRecord:
        support = [rows[i] for i in index.get(entry.token, [])]
        return _ablate_support(entry, support, floor)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, entries))
    return [run(e) for e in entries]


@dataclass(frozen=True)
class RankedAblations:
    top_positive: list[AblationRecord]
    top_negative: list[AblationRecord]
    n_excluded: int
    diagnostics: list[str]


def rank(
    records: list[AblationRecord],
    floor: int = DEFAULT_SUPPORT_FLOOR,
    top_k: int = 20,
) -> RankedAblations:
    """Filter excluded records, order by delta; ties break on support then token."""
    eligible = [r for r in records if not r.excluded and r.n_support >= floor]
    n_excluded = len(records) - len(eligible)
    diagnostics = []
    if not eligible:
        diagnostics.append(f"no tokens at or above the support floor of {floor}")
        logger.warning("rank: %s", diagnostics[-1])
    ordered = sorted(eligible, key=lambda r: (-r.delta_pvi, -r.n_support, r.token))
    top_positive = [r for r in ordered if r.delta_pvi > 0][:top_k]
    top_negative = sorted(
        [r for r in ordered if r.delta_pvi < 0],
        key=lambda r: (r.delta_pvi, -r.n_support, r.token),
    )[:top_k]
    return RankedAblations(top_positive, top_negative, n_excluded, diagnostics)


ABLATION_COLUMNS = (
    "token", "N", "mean_with", "mean_without", "delta",
    "pos_gold", "pos_pred", "pos_pred_without", "polarity", "source",
)


def write_ablation_table(records: list[AblationRecord], path: str | Path) -> None:
    """Delimited output mirroring the report layout, one row per token."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_COLUMNS)
        for r in records:
            writer.writerow([
                r.token, r.n_support,
                repr(r.mean_pvi_with), repr(r.mean_pvi_without), repr(r.delta_pvi),
                repr(r.pos_gold), repr(r.pos_pred), repr(r.pos_pred_without),
                r.polarity, "|".join(sorted(r.sources)),
            ])
