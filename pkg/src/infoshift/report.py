"""Report emission: coefficient tables in the familiar journal layout, the
half-year and category tables, distribution summaries, and rendered figures.

Every number printed in the text report is duplicated in report.json so
downstream consumers never parse prose tables.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .vinfo import estimate, histogram, read_records, write_histogram

logger = logging.getLogger(__name__)

FIGURE_DPI = 150
# Star convention: * p<0.1, ** p<0.05, *** p<0.01.
STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.1, "*"))

WEIGHTED_CAVEAT = (
    "CAVEAT: models were fitted with class-weighted loss; these values are not "
    "usable-information estimates in the strict sense."
)


def stars(p: float) -> str:
    if not math.isfinite(p):
        return ""
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""


def _fmt(x: float, places: int = 4) -> str:
    if x is None or not math.isfinite(x):
        return "."
    return f"{x:.{places}f}"


def _save_figure(fig, path: Path) -> None:
    fig.savefig(path, dpi=FIGURE_DPI, metadata={"Software": ""})
    plt.close(fig)


# ---------------------------------------------------------------------------
# Text blocks
# ---------------------------------------------------------------------------

def coefficient_block(blocks: dict[str, dict]) -> str:
    """Stacked coefficient table across specs, mirroring journal layout."""
    spec_names = sorted(blocks)
    all_names: list[str] = []
    for spec_name in spec_names:
        for name in blocks[spec_name]["names"]:
            if name != "(Intercept)" and name not in all_names:
                all_names.append(name)
    width = max(24, max((len(n) for n in all_names), default=10) + 2)
    col = 16
    lines = []
    rule = "=" * (width + col * len(spec_names))
    lines.append(rule)
    lines.append(" " * width + "Dependent variable: usable information (bits)".center(col * len(spec_names)))
    lines.append("-" * (width + col * len(spec_names)))
    lines.append(" " * width + "".join(name.center(col) for name in spec_names))
    lines.append("-" * (width + col * len(spec_names)))
    for name in all_names:
        est_cells, se_cells = [], []
        for spec_name in spec_names:
            block = blocks[spec_name]
            if name in block["coefficients"]:
                p = block["p_values"][name]
                est_cells.append(f"{_fmt(block['coefficients'][name])}{stars(p)}".center(col))
                se_cells.append(f"({_fmt(block['se'][name])})".center(col))
            else:
                est_cells.append(" ".center(col))
                se_cells.append(" ".center(col))
        lines.append(name.ljust(width) + "".join(est_cells))
        lines.append(" " * width + "".join(se_cells))
    lines.append("-" * (width + col * len(spec_names)))

    def _footer(label: str, key: str, places: int = 3, star_key: str | None = None) -> str:
        cells = []
        for spec_name in spec_names:
            block = blocks[spec_name]
            value = block[key]
            text = f"{value:,d}" if isinstance(value, int) else _fmt(value, places)
            if star_key:
                text += stars(block[star_key])
            cells.append(text.center(col))
        return label.ljust(width) + "".join(cells)

    lines.append(_footer("Observations", "n"))
    lines.append(_footer("Residual Std. Error", "residual_std_error"))
    lines.append(_footer("F Statistic", "f_statistic", star_key="f_pvalue"))
    lines.append(rule)
    lines.append("Note: *p<0.1; **p<0.05; ***p<0.01")
    return "\n".join(lines)


def halfyear_block(rows: list[dict]) -> str:
    lines = ["Half-year shifts relative to the reference window (Jul-Oct 2022)",
             "  (the reference window spans four months; the other bins span six)",
             f"{'Half-Year':<12}{'Coefficient':>12}{'95% CI':>26}{'N':>8}"]
    for r in rows:
        if r["is_reference"]:
            lines.append(f"{r['bin']:<12}{'Ref.':>12}{'':>26}{r['n']:>8}")
        else:
            ci = f"[{_fmt(r['ci_lo'])}, {_fmt(r['ci_hi'])}]"
            lines.append(
                f"{r['bin']:<12}{_fmt(r['coef']) + stars(r['p']):>12}{ci:>26}{r['n']:>8}"
            )
    return "\n".join(lines)


def category_block(rows: list[dict]) -> str:
    lines = ["Post-period shift by category (total effect: after + after x category)",
             f"{'Category':<28}{'Effect':>12}{'SE':>12}{'N':>8}"]
    for r in rows:
        mark = stars(r["p"])
        flag = " (low support)" if r.get("low_support") else ""
        ref = " [reference]" if r.get("is_reference") else ""
        lines.append(
            f"{r['category']:<28}{_fmt(r['effect']) + mark:>12}{'(' + _fmt(r['se']) + ')':>12}"
            f"{r['n']:>8}{ref}{flag}"
        )
    return "\n".join(lines)


def ablation_block(doc: dict) -> str:
    lines = [
        "Token ablation (approximation: " + doc["approximation_note"] + ")",
        f"support floor N >= {doc['floor']}; {doc['n_excluded']} tokens excluded",
        f"{'Token':<18}{'N':>6}{'with':>10}{'without':>10}{'delta':>10}"
        f"{'gold+':>8}{'pred+':>8}{'pred+ w/o':>10}",
    ]
    for section, rows in (("largest positive", doc["top_positive"]),
                          ("largest negative", doc["top_negative"])):
        lines.append(f"-- {section} --")
        for r in rows:
            lines.append(
                f"{r['token']:<18}{r['N']:>6}{_fmt(r['mean_with']):>10}"
                f"{_fmt(r['mean_without']):>10}{_fmt(r['delta']):>10}"
                f"{_fmt(r['pos_gold'], 2):>8}{_fmt(r['pos_pred'], 2):>8}"
                f"{_fmt(r['pos_pred_without'], 2):>10}"
            )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def fig_halfyear(rows: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    xs, ys, lo, hi, labels = [], [], [], [], []
    for i, r in enumerate(rows):
        labels.append(r["bin"])
        xs.append(i)
        if r["is_reference"]:
            ys.append(0.0)
            lo.append(0.0)
            hi.append(0.0)
        else:
            ys.append(r["coef"])
            lo.append(r["coef"] - r["ci_lo"])
            hi.append(r["ci_hi"] - r["coef"])
    ax.errorbar(xs, ys, yerr=[lo, hi], fmt="o-", capsize=3)
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("shift in usable information (bits)")
    ax.set_title("Half-year shifts vs. reference window")
    fig.tight_layout()
    _save_figure(fig, path)


def fig_histogram(bins: list, path: Path) -> None:
    periods = sorted({b.period for b in bins})
    by_period = {p: [b for b in bins if b.period == p] for p in periods}
    n_bins = len(next(iter(by_period.values())))
    labels = []
    for b in next(iter(by_period.values())):
        lo = "-inf" if not math.isfinite(b.lo) else f"{b.lo:.2f}"
        hi = "inf" if not math.isfinite(b.hi) else f"{b.hi:.2f}"
        labels.append(f"[{lo}, {hi})")
    width = 0.8 / max(1, len(periods))
    fig, ax = plt.subplots(figsize=(9, 4))
    for j, period in enumerate(periods):
        masses = [b.mass for b in by_period[period]]
        xs = np.arange(n_bins) + j * width
        ax.bar(xs, masses, width=width, label=period)
    ax.set_xticks(np.arange(n_bins) + width * (len(periods) - 1) / 2)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("fraction of observations")
    ax.set_title("Distribution of pointwise usable information by period")
    ax.legend()
    fig.tight_layout()
    _save_figure(fig, path)


def fig_ablation(doc: dict, path: Path) -> None:
    rows = list(doc["top_positive"][:10]) + list(reversed(doc["top_negative"][:10]))
    if not rows:
        return
    tokens = [r["token"] for r in rows]
    deltas = [r["delta"] for r in rows]
    colors = ["tab:blue" if d >= 0 else "tab:red" for d in deltas]
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(rows) + 1.5))
    ax.barh(range(len(rows)), deltas, color=colors)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(tokens)
    ax.invert_yaxis()
    ax.axvline(0.0, color="gray", lw=0.8)
    ax.set_xlabel("mean change in pointwise usable information (bits)")
    ax.set_title("Token ablation")
    fig.tight_layout()
    _save_figure(fig, path)


# ---------------------------------------------------------------------------
# Entry point used by the pipeline's report stage
# ---------------------------------------------------------------------------

def render(run) -> list[Path]:
    """Build report.json, report.txt, the histogram table, and the figures."""
    out: Path = run.out
    records = read_records(run.pvi_csv)
    weighted = run._weighted_flag()
    periods = sorted({r.period for r in records})
    info = {}
    for period in periods:
        est = estimate([r for r in records if r.period == period], weighted_flag=weighted)
        info[period] = {
            "v_entropy": est.v_entropy,
            "conditional_v_entropy": est.conditional_v_entropy,
            "v_information": est.v_information,
            "n": est.n,
            "standard_error": est.standard_error,
            "weighted": est.weighted_flag,
        }

    hist_bins, hist_diags = histogram(records, run.config.histogram_probs)
    hist_csv = out / "tables" / "histogram.csv"
    write_histogram(hist_bins, hist_csv)

    regress_doc = json.loads(run.regress_json.read_text(encoding="utf-8"))
    report_doc = {
        "artifact_version": run.manifest["artifact_version"],
        "config_hash": run.manifest["config_hash"],
        "seeds": run.config.seeds,
        "weighted": weighted,
        "info_estimates": info,
        "regressions": regress_doc["specs"],
        "histogram": [
            {"lo": b.lo, "hi": b.hi, "period": b.period, "mass": b.mass} for b in hist_bins
        ],
        "histogram_diagnostics": hist_diags,
    }
    if "halfyear" in regress_doc:
        report_doc["halfyear"] = regress_doc["halfyear"]
    if "categories" in regress_doc:
        report_doc["categories"] = regress_doc["categories"]

    outputs = [hist_csv]
    sections: list[str] = []
    title = "Usable-information run report"
    sections.append(title + "\n" + "=" * len(title))
    sections.append(f"config hash: {run.manifest['config_hash']}")
    if weighted:
        sections.append(WEIGHTED_CAVEAT)
    est_lines = ["Information estimates (held-out %s split)" % run.config.pvi_split]
    if weighted:
        est_lines.append(WEIGHTED_CAVEAT)
    for period in periods:
        e = info[period]
        est_lines.append(
            f"  {period:<10} H={_fmt(e['v_entropy'])}  H|X={_fmt(e['conditional_v_entropy'])}  "
            f"I={_fmt(e['v_information'])} bits  (n={e['n']}, se={_fmt(e['standard_error'])})"
        )
    sections.append("\n".join(est_lines))
    sections.append(coefficient_block(regress_doc["specs"]))
    if "halfyear" in regress_doc:
        sections.append(halfyear_block(regress_doc["halfyear"]))
        fig_path = out / "figures" / "halfyear_effects.png"
        fig_halfyear(regress_doc["halfyear"], fig_path)
        outputs.append(fig_path)
    if "categories" in regress_doc:
        sections.append(category_block(regress_doc["categories"]))

    hist_fig = out / "figures" / "pvi_histogram.png"
    fig_histogram(hist_bins, hist_fig)
    outputs.append(hist_fig)

    if run.config.ablation_enabled and run.ablation_json.is_file():
        ablation_doc = json.loads(run.ablation_json.read_text(encoding="utf-8"))
        report_doc["ablation"] = ablation_doc
        if ablation_doc["top_positive"] or ablation_doc["top_negative"]:
            sections.append(ablation_block(ablation_doc))
            abl_fig = out / "figures" / "ablation_tokens.png"
            fig_ablation(ablation_doc, abl_fig)
            outputs.append(abl_fig)
        else:
            sections.append("Token ablation: no tokens at or above the support floor; section omitted")
    elif run.config.ablation_enabled:
        sections.append("Token ablation: stage produced no output; section omitted")

    report_json = out / "report.json"
    report_json.write_text(json.dumps(report_doc, sort_keys=True, indent=1) + "\n",
                           encoding="utf-8")
    report_txt = out / "report.txt"
    report_txt.write_text("\n\n".join(sections) + "\n", encoding="utf-8")
    return [report_json, report_txt, *outputs]
