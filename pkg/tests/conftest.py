"""Shared fixtures: planted-signal corpora and one full pipeline run reused
across the suite (the 10k-per-period run is expensive enough to share)."""

from __future__ import annotations

import json
import time
from types import SimpleNamespace

import numpy as np
import pytest

from infoshift.corpus import (
    PlantedSignalSpec, synthesize, write_corpus, write_labels,
)
from infoshift.pipeline import PipelineRun, parse_config


def make_config_doc(corpus_name: str = "corpus.jsonl", labels_name: str = "labels.jsonl",
                    **overrides) -> dict:
    doc = {
        "corpus": {"path": corpus_name, "format": "jsonl"},
        "labels": {"path": labels_name},
        "seeds": {"balance": 42, "split": 7, "fit": 42},
        "scheme": "binary",
        "cutoff": "2022-11-30",
        "regressions": [
            {"name": "baseline"},
            {"name": "robust_hc3", "se_type": "HC3"},
            {"name": "controls", "controls": [
                "log_price", "log_shop_reviews", "log_item_reviews", "rating", "has_discount",
            ]},
        ],
        "ablation": {"lexicon": None, "min_support": 25, "top_k": 20},
    }
    doc.update(overrides)
    return doc


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("runs")


@pytest.fixture(scope="session")
def planted_files(workdir):
    """Criterion-scale planted corpus: 10,000 listings per period, flip 0.1."""
    spec = PlantedSignalSpec(n_per_period=10_000, flip_prob=0.1)
    corpus, labels = synthesize(spec, seed=42)
    corpus_path = workdir / "corpus.jsonl"
    labels_path = workdir / "labels.jsonl"
    write_corpus(corpus.listings, corpus_path)
    write_labels(labels, labels_path)
    return SimpleNamespace(
        spec=spec,
        corpus=corpus,
        labels={r.listing_id: r.label for r in labels},
        corpus_path=corpus_path,
        labels_path=labels_path,
    )


@pytest.fixture(scope="session")
def planted_run(planted_files, workdir):
    """Full pipeline over the planted corpus, timed for the wall-clock bound."""
    doc = make_config_doc()
    config = parse_config(doc, base_dir=workdir)
    run = PipelineRun(config, workdir / "main")
    started = time.monotonic()
    run.execute()
    elapsed = time.monotonic() - started
    report = json.loads((run.out / "report.json").read_text(encoding="utf-8"))
    regress = json.loads(run.regress_json.read_text(encoding="utf-8"))
    return SimpleNamespace(
        run=run,
        config_doc=doc,
        elapsed=elapsed,
        report=report,
        regress=regress,
        files=planted_files,
    )


@pytest.fixture(scope="session")
def small_planted():
    """Fast in-memory planted corpus for module-level tests."""
    spec = PlantedSignalSpec(n_per_period=1500, flip_prob=0.1, vocab_size=120)
    corpus, labels = synthesize(spec, seed=11)
    return SimpleNamespace(
        spec=spec,
        corpus=corpus,
        labels={r.listing_id: r.label for r in labels},
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(20260810)
