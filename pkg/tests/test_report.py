"""Report rendering: stars, table blocks, and section omission rules."""

from __future__ import annotations

import json
import math

from infoshift.report import WEIGHTED_CAVEAT, coefficient_block, stars
from infoshift.pipeline import parse_config, run
from conftest import make_config_doc


def test_star_thresholds_match_convention():
    assert stars(0.009) == "***"
    assert stars(0.01) == "**"
    assert stars(0.049) == "**"
    assert stars(0.05) == "*"
    assert stars(0.099) == "*"
    assert stars(0.1) == ""
    assert stars(0.7) == ""
    assert stars(math.nan) == ""


def test_coefficient_block_layout():
    blocks = {
        "baseline": {
            "names": ["(Intercept)", "after"],
            "coefficients": {"(Intercept)": 0.1, "after": 0.1432},
            "se": {"(Intercept)": 0.01, "after": 0.015},
            "p_values": {"(Intercept)": 0.2, "after": 0.0001},
            "n": 19898,
            "residual_std_error": 0.869,
            "f_statistic": 94.394,
            "f_pvalue": 0.0001,
            "se_type": "classical",
        },
    }
    text = coefficient_block(blocks)
    assert "after" in text
    assert "0.1432***" in text
    assert "(0.0150)" in text
    assert "19,898" in text
    assert "Note: *p<0.1; **p<0.05; ***p<0.01" in text
    assert "(Intercept)" not in text  # intercept rows stay out of the table body


def test_empty_ablation_section_omitted_with_note(tmp_path):
    from infoshift.corpus import PlantedSignalSpec, synthesize, write_corpus, write_labels
    spec = PlantedSignalSpec(n_per_period=400, flip_prob=0.1, vocab_size=60)
    corpus, labels = synthesize(spec, seed=17)
    write_corpus(corpus.listings, tmp_path / "corpus.jsonl")
    write_labels(labels, tmp_path / "labels.jsonl")
    doc = make_config_doc()
    doc["regressions"] = [{"name": "baseline"}]
    # a support floor no token can meet excludes everything
    doc["ablation"] = {"lexicon": None, "min_support": 10_000, "top_k": 5}
    config = parse_config(doc, base_dir=tmp_path)
    run(config, tmp_path / "out")
    report = (tmp_path / "out" / "report.txt").read_text()
    assert "section omitted" in report
    report_doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report_doc["ablation"]["top_positive"] == []


def test_weighted_caveat_text_names_the_limitation():
    assert "not" in WEIGHTED_CAVEAT and "usable-information" in WEIGHTED_CAVEAT
