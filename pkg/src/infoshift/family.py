"""Predictive families: a trainable bag-of-tokens log-linear family with a
bias-only null member.

A family member maps text (or the null input) to a clamped two-point
distribution over the binary label space. The zero-weight member ignores its
input entirely, so any output distribution reachable by a fitted member is
also reachable while ignoring the input (optional ignorance).
"""

from __future__ import annotations

import json
import logging
import math
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import expit

from .errors import ConfigError, DataError, NumericError

logger = logging.getLogger(__name__)

NATIVE_FAMILY_ID = "native_loglinear"
EXTERNAL_FAMILY_ID = "external"
PROB_CLAMP = 1e-6
LOG2E = math.log2(math.e)

FAMILY_MODES = ("native_loglinear", "external", "exact_table")


@dataclass(frozen=True)
class PredictiveFamily:
    """A family of maps from inputs (or the null input) to label distributions.

    Every family here satisfies optional ignorance: any output distribution a
    member produces is also reachable by a member that ignores its input
    (for the native family, the zero-weight member with a matching bias).
    ``exact_table`` mode stands in for the unrestricted family on finite
    instances, where usable information reduces to Shannon information.
    """

    family_id: str
    label_space: tuple[int, ...] = (0, 1)
    mode: str = "native_loglinear"

    def __post_init__(self) -> None:
        if self.mode not in FAMILY_MODES:
            raise ConfigError(f"unknown family mode {self.mode!r} (expected one of {FAMILY_MODES})")
        if len(self.label_space) != 2:
            raise ConfigError("only binary label spaces are supported in v1")


NATIVE_FAMILY = PredictiveFamily(NATIVE_FAMILY_ID, mode="native_loglinear")


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, strip leading/trailing punctuation."""
    out = []
    for raw in text.lower().split():
        tok = _strip_punct(raw)
        if tok:
            out.append(tok)
    return out


def build_vocabulary(texts: list[str], min_freq: int = 2) -> list[str]:
    """Training vocabulary: tokens with frequency >= min_freq, sorted."""
    counts: dict[str, int] = {}
    for text in texts:
        for tok in tokenize(text):
            counts[tok] = counts.get(tok, 0) + 1
    return sorted(t for t, c in counts.items() if c >= min_freq)


def _count_matrix(texts: list[str], index: dict[str, int]) -> sparse.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for text in texts:
        row: dict[int, float] = {}
        for tok in tokenize(text):
            j = index.get(tok)
            if j is not None:
                row[j] = row.get(j, 0.0) + 1.0
        for j in sorted(row):
            indices.append(j)
            data.append(row[j])
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(texts), len(index)),
    )


def _clamp(p: np.ndarray | float) -> np.ndarray | float:
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class ScoreRecord:
    """Per-example clamped log2 probabilities from one model."""

    listing_id: str
    log2_prob: dict[int, float]  # label (1 = positive) -> log2 probability
    model_role: str              # "null" | "content"


@dataclass
class FitSettings:
    """Optimizer settings for the log-linear family.

    ``learning_rate=None`` selects an automatic step of 1/L where L bounds the
    loss curvature (largest eigenvalue of X'X/(4n) plus the L2 strength),
    estimated by power iteration.
    """

    max_epochs: int = 500
    learning_rate: float | None = None
    l2: float = 1e-4
    patience: int = 5
    tol_bits: float = 1e-4
    min_token_freq: int = 2

    def validate(self) -> None:
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass
class FittedModel:
    """A fitted member of the log-linear family.

    The null role has empty token_weights and scores every input identically.
    Emitted probabilities are clamped to [1e-6, 1 - 1e-6].
    """

    family_id: str
    role: str  # "null" | "content"
    bias: float  # natural-log odds of the positive label
    token_weights: dict[str, float] = field(default_factory=dict)
    weighted: bool = False
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.role == "null" and self.token_weights:
            raise ConfigError("null-role models must have empty token_weights")

    def logit(self, text: str) -> float:
        z = self.bias
        if self.token_weights:
            for tok in tokenize(text):
                w = self.token_weights.get(tok)
                if w is not None:
                    z += w
        return z

    def prob_positive(self, text: str) -> float:
        return float(_clamp(expit(self.logit(text))))

    def score(self, text: str, listing_id: str = "") -> ScoreRecord:
        p = self.prob_positive(text)
        return ScoreRecord(
            listing_id=listing_id,
            log2_prob={1: math.log2(p), 0: math.log2(1.0 - p)},
            model_role=self.role,
        )

    def score_batch(self, texts: list[str]) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized scoring: (log2 P(positive), log2 P(negative)) per text."""
        if not self.token_weights:
            z = np.full(len(texts), self.bias)
        else:
            vocab = sorted(self.token_weights)
            index = {t: j for j, t in enumerate(vocab)}
            counts = _count_matrix(texts, index)
            w = np.array([self.token_weights[t] for t in vocab])
            z = self.bias + counts @ w
        p = _clamp(expit(z))
        return np.log2(p), np.log2(1.0 - p)

    def null_member(self) -> "FittedModel":
        """The optional-ignorance member producing this model's null-input output."""
        return FittedModel(
            family_id=self.family_id,
            role="null",
            bias=self.bias,
            weighted=self.weighted,
            training_meta={"derived_from": self.role},
        )

    def to_dict(self) -> dict:
        return {
            "family_id": self.family_id,
            "role": self.role,
            "bias": self.bias,
            "token_weights": {t: self.token_weights[t] for t in sorted(self.token_weights)},
            "weighted": self.weighted,
            "training_meta": self.training_meta,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FittedModel":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            family_id=d["family_id"],
            role=d["role"],
            bias=float(d["bias"]),
            token_weights={str(k): float(v) for k, v in d["token_weights"].items()},
            weighted=bool(d.get("weighted", False)),
            training_meta=d.get("training_meta", {}),
        )


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def fit_null(labels: list[int] | np.ndarray) -> FittedModel:
    """Closed-form null model: bias equals the log-odds of the positive frequency."""
    y = np.asarray(labels, dtype=float)
    if y.size == 0:
        raise DataError("fit_null requires at least one label")
    freq = float(y.mean())
    clamped = float(_clamp(freq))
    if clamped != freq:
        logger.warning("fit_null: single-class input (freq=%.6f), clamping to %.6g", freq, clamped)
    return FittedModel(
        family_id=NATIVE_FAMILY_ID,
        role="null",
        bias=_logit(clamped),
        training_meta={"n": int(y.size), "positive_frequency": freq},
    )


def _loss_bits(p: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> float:
    p = _clamp(p)
    ll = np.where(y == 1.0, np.log2(p), np.log2(1.0 - p))
    if weights is None:
        return float(-np.mean(ll))
    return float(-np.mean(weights * ll))


def _lipschitz_step(counts: sparse.csr_matrix, weights: np.ndarray, l2: float) -> float:
    """1/L with L from ~20 power iterations on X' diag(c) X / (4n)."""
    n = counts.shape[0]
    v = np.ones(counts.shape[1])
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(20):
        u = counts @ v
        u *= weights
        v_next = counts.T @ u
        norm = np.linalg.norm(v_next)
        if norm == 0.0:
            lam = 0.0
            break
        lam = norm
        v = v_next / norm
    lipschitz = lam / (4.0 * n) + l2
    if lipschitz <= 0.0:
        return 1.0
    return 1.0 / lipschitz


def fit_content(
    train: list[tuple[str, int]],
    validation: list[tuple[str, int]],
    settings: FitSettings | None = None,
    seed: int = 0,
    class_weights: tuple[float, float] | None = None,
) -> FittedModel:
    """Fit the content model by full-batch gradient descent with early stopping.

    The search starts at the zero-weight member with bias set to the training
    marginal (the null member), evaluates validation loss at every epoch
    including epoch zero, and returns the best-on-validation parameters.
    Training stops once ``patience`` consecutive evaluations fail to improve
    the best validation loss by more than ``tol_bits``.
    """
    settings = settings or FitSettings()
    settings.validate()
    if not train or not validation:
        raise DataError("fit_content requires nonempty train and validation sets")
    weighted = class_weights is not None
    if weighted:
        if class_weights[0] <= 0 or class_weights[1] <= 0:
            raise ConfigError(f"class weights must be positive, got {class_weights}")

    train_texts = [t for t, _ in train]
    y_train = np.array([y for _, y in train], dtype=float)
    val_texts = [t for t, _ in validation]
    y_val = np.array([y for _, y in validation], dtype=float)

    vocab = build_vocabulary(train_texts, settings.min_token_freq)
    index = {t: j for j, t in enumerate(vocab)}
    x_train = _count_matrix(train_texts, index)
    x_val = _count_matrix(val_texts, index)
    n = x_train.shape[0]

    if weighted:
        w_neg, w_pos = class_weights
        raw = np.where(y_train == 1.0, w_pos, w_neg)
        example_weights = raw * (n / raw.sum())
        val_weights = np.where(y_val == 1.0, w_pos, w_neg)
        val_weights = val_weights * (y_val.size / val_weights.sum())
    else:
        example_weights = np.ones(n)
        val_weights = None

    freq = float(_clamp(float(np.average(y_train, weights=example_weights))))
    bias = _logit(freq)
    w = np.zeros(len(vocab))
    step = settings.learning_rate or _lipschitz_step(x_train, example_weights, settings.l2)

    def val_loss(bias_: float, w_: np.ndarray) -> float:
        z = bias_ + x_val @ w_
        return _loss_bits(expit(z), y_val, val_weights)

    best_loss = val_loss(bias, w)
    best = (bias, w.copy(), 0)
    stall = 0
    epochs_run = 0
    for epoch in range(1, settings.max_epochs + 1):
        z = bias + x_train @ w
        if not np.all(np.isfinite(z)):
            bad = int(np.flatnonzero(~np.isfinite(z))[0])
            raise NumericError(
                f"non-finite logit at epoch {epoch}, example {bad} "
                f"(text: {train_texts[bad][:80]!r})"
            )
        resid = example_weights * (expit(z) - y_train)
        grad_w = (x_train.T @ resid) / n + settings.l2 * w
        grad_b = float(resid.sum()) / n
        w -= step * grad_w
        bias -= step * grad_b
        epochs_run = epoch
        loss = val_loss(bias, w)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        if loss < best_loss - settings.tol_bits:
            stall = 0
        else:
            stall += 1
        if loss < best_loss:
            best_loss = loss
            best = (bias, w.copy(), epoch)
        if stall >= settings.patience:
            break

    best_bias, best_w, best_epoch = best
    token_weights = {tok: float(best_w[j]) for tok, j in index.items()}
    model = FittedModel(
        family_id=NATIVE_FAMILY_ID,
        role="content",
        bias=float(best_bias),
        token_weights=token_weights,
        weighted=weighted,
        training_meta={
            "seed": seed,
            "epochs_run": epochs_run,
            "best_epoch": best_epoch,
            "final_validation_bits": best_loss,
            "vocab_size": len(vocab),
            "step": step,
        },
    )
    return model


def fit_weighted(
    train: list[tuple[str, int]],
    validation: list[tuple[str, int]],
    class_weights: tuple[float, float],
    settings: FitSettings | None = None,
    seed: int = 0,
) -> FittedModel:
    """As fit_content with per-class loss weights; output is flagged ``weighted``.

    Weighted fits do not minimize the plain conditional cross-entropy, so
    downstream information reports carry a caveat banner.
    """
    return fit_content(train, validation, settings=settings, seed=seed, class_weights=class_weights)
