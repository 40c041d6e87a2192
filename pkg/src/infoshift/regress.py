"""OLS with classical and heteroskedasticity-robust inference.

Covers the pipeline's regression surface: the binary period contrast, the
half-year dummy specification against a reference window, listing-level
controls, and category interactions with total-effect contrasts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as slinalg
from scipy import stats as sstats
from scipy.special import betainc

from .corpus import HALFYEAR_BINS, Listing, REF_BIN
from .errors import ConfigError, DataError, NumericError
from .vinfo import PviRecord

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e10
SE_TYPES = ("classical", "HC0", "HC1", "HC2", "HC3")

FULL_CONTROLS = ("log_price", "log_shop_reviews", "log_item_reviews", "rating", "has_discount")
ALL_CONTROLS = FULL_CONTROLS + ("log_word_count",)


def student_t_sf(t: float, df: int) -> float:
    """P(T > t) for Student's t via the regularized incomplete beta function."""
    if df <= 0:
        raise NumericError(f"t survival function needs df > 0, got {df}")
    if t < 0:
        return 1.0 - student_t_sf(-t, df)
    if t == 0:
        return 0.5
    x = df / (df + t * t)
    return 0.5 * float(betainc(df / 2.0, 0.5, x))


def f_sf(f: float, d1: int, d2: int) -> float:
    """P(F > f) via the regularized incomplete beta function."""
    if f <= 0:
        return 1.0
    x = d2 / (d2 + d1 * f)
    return float(betainc(d2 / 2.0, d1 / 2.0, x))


# ---------------------------------------------------------------------------
# Data table and design matrices
# ---------------------------------------------------------------------------

def build_table(records: list[PviRecord], listings_by_id: dict[str, Listing]) -> dict[str, object]:
    """Join usable-information records with listing attributes into columns."""
    missing = [r.listing_id for r in records if r.listing_id not in listings_by_id]
    if missing:
        raise DataError(f"{len(missing)} records have no matching listing (first: {missing[:3]})")
    listings = [listings_by_id[r.listing_id] for r in records]
    return {
        "listing_id": [r.listing_id for r in records],
        "pvi": np.array([r.pvi for r in records]),
        "period": [r.period for r in records],
        "halfyear_bin": [r.halfyear_bin for r in records],
        "price_usd": np.array([lst.price_usd for lst in listings]),
        "shop_reviews": np.array([lst.shop_reviews for lst in listings], dtype=float),
        "item_reviews": np.array([lst.item_reviews for lst in listings], dtype=float),
        "rating": np.array([lst.rating if lst.rating is not None else np.nan for lst in listings]),
        "has_discount": np.array([1.0 if lst.has_discount else 0.0 for lst in listings]),
        "word_count": np.array([lst.word_count for lst in listings], dtype=float),
        "category": [lst.category for lst in listings],
    }


@dataclass
class RegressionSpec:
    """Which regressors enter, and which covariance estimator is reported."""

    name: str = "baseline"
    dependent: str = "pvi"
    after: bool = True
    halfyear: bool = False
    controls: tuple[str, ...] = ()
    category_after: bool = False
    se_type: str = "classical"
    raw_review_counts: bool = False
    reference_bin: str = REF_BIN
    reference_category: str | None = None

    def validate(self) -> None:
        if self.se_type not in SE_TYPES:
            raise ConfigError(f"unknown se_type {self.se_type!r} (expected one of {SE_TYPES})")
        unknown = set(self.controls) - set(ALL_CONTROLS)
        if unknown:
            raise ConfigError(f"unknown controls {sorted(unknown)} (expected subset of {ALL_CONTROLS})")
        if self.after and self.halfyear:
            raise ConfigError("after and halfyear dummies are mutually exclusive in one spec")
        if self.category_after and not self.after:
            raise ConfigError("category interactions require the after indicator")
        if not (self.after or self.halfyear):
            raise ConfigError("spec includes neither the after indicator nor half-year dummies")


def _control_column(table: dict, name: str, raw_reviews: bool) -> np.ndarray:
    if name == "log_price":
        price = table["price_usd"]
        col = np.where(price > 0, np.log(np.where(price > 0, price, 1.0)), np.nan)
        return col
    if name == "log_shop_reviews":
        v = table["shop_reviews"]
        return v.astype(float) if raw_reviews else np.log1p(v)
    if name == "log_item_reviews":
        v = table["item_reviews"]
        return v.astype(float) if raw_reviews else np.log1p(v)
    if name == "rating":
        return table["rating"]
    if name == "has_discount":
        return table["has_discount"]
    if name == "log_word_count":
        wc = table["word_count"]
        return np.where(wc > 0, np.log(np.where(wc > 0, wc, 1.0)), np.nan)
    raise ConfigError(f"unknown control {name!r}")


@dataclass
class DesignInfo:
    names: list[str]
    n_dropped: int
    bins_present: list[str] = field(default_factory=list)
    categories: list[str] = field(default_factory=list)
    reference_category: str | None = None
    dropped_bins: list[str] = field(default_factory=list)


def build_design(table: dict, spec: RegressionSpec) -> tuple[np.ndarray, np.ndarray, DesignInfo]:
    spec.validate()
    n = len(table["pvi"])
    names: list[str] = ["(Intercept)"]
    cols: list[np.ndarray] = [np.ones(n)]
    if spec.after:
        period = table["period"]
        cols.append(np.array([1.0 if p == "post" else 0.0 for p in period]))
        names.append("after")
    bins_present: list[str] = []
    dropped_bins: list[str] = []
    if spec.halfyear:
        bins = table["halfyear_bin"]
        if any(not b for b in bins):
            raise DataError("half-year specification requires half-year bins on every record")
        present = {b for b in bins}
        for b in HALFYEAR_BINS:
            if b == spec.reference_bin:
                continue
            if b not in present:
                dropped_bins.append(b)
                continue
            bins_present.append(b)
            cols.append(np.array([1.0 if x == b else 0.0 for x in bins]))
            names.append(f"bin[{b}]")
        if dropped_bins:
            logger.warning("half-year bins with no observations dropped: %s", dropped_bins)
    for ctrl in spec.controls:
        cols.append(_control_column(table, ctrl, spec.raw_review_counts))
        names.append(ctrl)
    categories: list[str] = []
    reference_category = None
    row_valid = np.ones(n, dtype=bool)
    if spec.category_after:
        raw_cats = table["category"]
        present_cats = sorted({c for c in raw_cats if c})
        if not present_cats:
            raise DataError("category interactions requested but no categories present")
        reference_category = spec.reference_category or present_cats[0]
        if reference_category not in present_cats:
            raise ConfigError(f"reference category {reference_category!r} not present in data")
        categories = present_cats
        row_valid &= np.array([bool(c) for c in raw_cats])
        after = np.array([1.0 if p == "post" else 0.0 for p in table["period"]])
        for c in present_cats:
            if c == reference_category:
                continue
            ind = np.array([1.0 if x == c else 0.0 for x in raw_cats])
            cols.append(after * ind)
            names.append(f"after:category[{c}]")

    X = np.column_stack(cols)
    y = np.asarray(table[spec.dependent], dtype=float)
    keep = np.isfinite(X).all(axis=1) & np.isfinite(y) & row_valid
    n_dropped = int(n - keep.sum())
    if n_dropped:
        logger.info("regression %s: dropped %d rows with missing values listwise", spec.name, n_dropped)
    X = X[keep]
    y = y[keep]
    info = DesignInfo(
        names=names,
        n_dropped=n_dropped,
        bins_present=bins_present,
        categories=categories,
        reference_category=reference_category,
        dropped_bins=dropped_bins,
    )
    return y, X, info


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass
class RegressionResult:
    spec_name: str
    names: list[str]
    coef: np.ndarray
    cov: np.ndarray
    se_type: str
    n: int
    df: int
    n_dropped: int
    residual_std_error: float
    f_statistic: float
    f_pvalue: float
    rss: float
    design_info: DesignInfo
    X: np.ndarray
    y: np.ndarray
    residuals: np.ndarray
    hat_diag: np.ndarray
    xtx_inv: np.ndarray
    cov_classical: np.ndarray

    @property
    def coefficients(self) -> dict[str, float]:
        return {name: float(b) for name, b in zip(self.names, self.coef)}

    def se(self, name: str | None = None) -> dict[str, float] | float:
        diag = np.sqrt(np.diag(self.cov))
        if name is None:
            return {n: float(s) for n, s in zip(self.names, diag)}
        return float(diag[self.names.index(name)])

    @property
    def p_values(self) -> dict[str, float]:
        out = {}
        for name, b, se in zip(self.names, self.coef, np.sqrt(np.diag(self.cov))):
            t = b / se
            out[name] = 2.0 * student_t_sf(abs(float(t)), self.df)
        return out

    def conf_int(self, name: str, level: float = 0.95) -> tuple[float, float]:
        crit = float(sstats.t.ppf(0.5 + level / 2.0, self.df))
        b = self.coefficients[name]
        s = self.se(name)
        return b - crit * s, b + crit * s

    def contrast(self, vector: np.ndarray) -> tuple[float, float, float]:
        """Estimate, SE, and two-sided p-value of a linear combination of coefficients."""
        v = np.asarray(vector, dtype=float)
        est = float(v @ self.coef)
        var = float(v @ self.cov @ v)
        if var < 0:
            raise NumericError("negative contrast variance; covariance not PSD")
        se = math.sqrt(var)
        p = 2.0 * student_t_sf(abs(est / se), self.df) if se > 0 else math.nan
        return est, se, p


def _check_rank(X: np.ndarray, names: list[str]) -> None:
    cond = float(np.linalg.cond(X))
    if cond > CONDITION_LIMIT or not math.isfinite(cond):
        r = np.linalg.qr(X, mode="r")
        diag = np.abs(np.diag(r))
        scale = diag.max() if diag.size else 0.0
        bad = [names[i] for i in range(len(names)) if diag[i] <= 1e-10 * scale]
        raise DataError(
            f"design matrix is rank deficient (condition {cond:.3g}); "
            f"collinear columns: {bad or 'unidentified'}"
        )


def fit_ols(table: dict, spec: RegressionSpec) -> RegressionResult:
    """Least squares via QR with classical covariance and an overall F test."""
    y, X, info = build_design(table, spec)
    n, k = X.shape
    if n <= k:
        raise DataError(f"{n} observations cannot identify {k} coefficients")
    _check_rank(X, info.names)
    Q, R = np.linalg.qr(X, mode="reduced")
    coef = slinalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ coef
    rss = float(resid @ resid)
    df = n - k
    s2 = rss / df
    r_inv = slinalg.solve_triangular(R, np.eye(k))
    xtx_inv = r_inv @ r_inv.T
    cov_classical = s2 * xtx_inv
    hat = np.einsum("ij,ij->i", Q, Q)
    if k > 1:
        rss0 = float(np.sum((y - y.mean()) ** 2))
        q = k - 1
        f_stat = ((rss0 - rss) / q) / s2
        f_p = f_sf(f_stat, q, df)
    else:
        f_stat, f_p = math.nan, math.nan
    result = RegressionResult(
        spec_name=spec.name,
        names=info.names,
        coef=coef,
        cov=cov_classical,
        se_type="classical",
        n=n,
        df=df,
        n_dropped=info.n_dropped,
        residual_std_error=math.sqrt(s2),
        f_statistic=f_stat,
        f_pvalue=f_p,
        rss=rss,
        design_info=info,
        X=X,
        y=y,
        residuals=resid,
        hat_diag=hat,
        xtx_inv=xtx_inv,
        cov_classical=cov_classical,
    )
    if spec.se_type != "classical":
        result.cov = robust_cov(result, spec.se_type)
        result.se_type = spec.se_type
    return result


def robust_cov(result: RegressionResult, se_type: str) -> np.ndarray:
    """Sandwich covariance with residual weights per the HC variant."""
    if se_type == "classical":
        return result.cov_classical
    if se_type not in SE_TYPES:
        raise ConfigError(f"unknown se_type {se_type!r}")
    e2 = result.residuals ** 2
    n, k = result.X.shape
    if se_type in ("HC0", "HC1"):
        w = e2
    else:
        leverage_cap = 1.0 - 1e-12
        if np.any(result.hat_diag >= leverage_cap):
            raise NumericError(f"{se_type} undefined: at least one observation has leverage 1")
        if se_type == "HC2":
            w = e2 / (1.0 - result.hat_diag)
        else:
            w = e2 / (1.0 - result.hat_diag) ** 2
    meat = (result.X * w[:, None]).T @ result.X
    cov = result.xtx_inv @ meat @ result.xtx_inv
    if se_type == "HC1":
        cov = cov * (n / (n - k))
    return cov


# ---------------------------------------------------------------------------
# Derived analyses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinEffect:
    bin: str
    coef: float
    se: float
    ci_lo: float
    ci_hi: float
    p: float
    n: int
    is_reference: bool = False


def halfyear_effects(
    table: dict,
    se_type: str = "classical",
    reference: str = REF_BIN,
    level: float = 0.95,
) -> tuple[list[BinEffect], RegressionResult]:
    """Per-bin shift relative to the reference window, with confidence intervals."""
    spec = RegressionSpec(name="halfyear", after=False, halfyear=True,
                          se_type=se_type, reference_bin=reference)
    result = fit_ols(table, spec)
    bin_counts: dict[str, int] = {}
    for b in table["halfyear_bin"]:
        bin_counts[b] = bin_counts.get(b, 0) + 1
    rows: list[BinEffect] = []
    for b in HALFYEAR_BINS:
        if b == reference:
            rows.append(BinEffect(b, 0.0, math.nan, math.nan, math.nan, math.nan,
                                  bin_counts.get(b, 0), is_reference=True))
            continue
        name = f"bin[{b}]"
        if name not in result.names:
            continue
        lo, hi = result.conf_int(name, level)
        rows.append(BinEffect(
            bin=b,
            coef=result.coefficients[name],
            se=result.se(name),
            ci_lo=lo,
            ci_hi=hi,
            p=result.p_values[name],
            n=bin_counts.get(b, 0),
        ))
    return rows, result


@dataclass(frozen=True)
class CategoryEffect:
    category: str
    effect: float
    se: float
    p: float
    n: int
    is_reference: bool
    low_support: bool


def category_effects(
    table: dict,
    se_type: str = "classical",
    floor: int = 25,
    reference_category: str | None = None,
) -> tuple[list[CategoryEffect], CategoryEffect, RegressionResult]:
    """Total post-period effect per category from one pooled interacted fit.

    The total effect for the reference category is the plain after
    coefficient; for the others it is after + interaction, with the SE taken
    from the full covariance via the contrast vector. The pooled row comes
    from a separate fit without interactions.
    """
    spec = RegressionSpec(name="category", after=True, category_after=True,
                          se_type=se_type, reference_category=reference_category)
    result = fit_ols(table, spec)
    info = result.design_info
    cat_counts: dict[str, int] = {}
    for c in table["category"]:
        if c:
            cat_counts[c] = cat_counts.get(c, 0) + 1
    after_idx = result.names.index("after")
    rows: list[CategoryEffect] = []
    for c in info.categories:
        v = np.zeros(len(result.names))
        v[after_idx] = 1.0
        if c != info.reference_category:
            v[result.names.index(f"after:category[{c}]")] = 1.0
        est, se, p = result.contrast(v)
        n_cat = cat_counts.get(c, 0)
        rows.append(CategoryEffect(
            category=c, effect=est, se=se, p=p, n=n_cat,
            is_reference=(c == info.reference_category),
            low_support=n_cat < floor,
        ))
    pooled_result = fit_ols(table, RegressionSpec(name="pooled", after=True, se_type=se_type))
    pooled = CategoryEffect(
        category="All Categories",
        effect=pooled_result.coefficients["after"],
        se=pooled_result.se("after"),
        p=pooled_result.p_values["after"],
        n=pooled_result.n,
        is_reference=False,
        low_support=False,
    )
    return rows, pooled, result
