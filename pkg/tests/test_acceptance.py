"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines. The quantitative criteria run against the planted-signal corpus
(10,000 listings per period, flip probability 0.1) whose analytic post-period
information is 1 + p*log2(p) + (1-p)*log2(1-p) = 0.5310 bits.
"""

from __future__ import annotations

import hashlib
import json
import math
from contextlib import contextmanager
from datetime import date
from pathlib import Path

import numpy as np

from infoshift.ablation import remove_token
from infoshift.corpus import Corpus, Listing, true_post_information, write_corpus
from infoshift.design import check_log_score_identity, exact_vinformation, random_instance
from infoshift.family import fit_null
from infoshift.pipeline import PipelineRun, parse_config, read_records, run, seed_sweep
from infoshift.regress import RegressionSpec, fit_ols, robust_cov
from infoshift.vinfo import estimate, make_record
from conftest import make_config_doc

TRUE_POST_BITS = true_post_information(0.1)


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"[criterion {number:>2}] FAIL  {description}")
        raise
    else:
        print(f"[criterion {number:>2}] PASS  {description}")


def _digest_tree(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


# -- 1: planted-signal recovery ------------------------------------------------------

def test_criterion_1_planted_signal_recovery(planted_run):
    with criterion(1, "planted-signal recovery: information levels, beta, p, wall time"):
        info = planted_run.report["info_estimates"]
        pre = info["pre"]["v_information"]
        post = info["post"]["v_information"]
        assert -0.02 <= pre <= 0.05, f"pre-period estimate {pre:.4f} outside [-0.02, 0.05]"
        assert 0.48 <= post <= 0.56, f"post-period estimate {post:.4f} outside [0.48, 0.56]"
        assert abs(TRUE_POST_BITS - 0.5310044064107188) < 1e-12

        baseline = planted_run.regress["specs"]["baseline"]
        beta = baseline["coefficients"]["after"]
        gap = post - pre
        assert abs(beta - gap) <= 0.06, f"beta {beta:.4f} vs estimated gap {gap:.4f}"
        assert baseline["p_values"]["after"] < 0.01
        assert planted_run.elapsed < 120.0, f"pipeline took {planted_run.elapsed:.1f}s"


# -- 2: null placebo -------------------------------------------------------------------

def test_criterion_2_null_placebo(planted_run, workdir):
    with criterion(2, "shuffled period assignments give |beta| < 2 SE"):
        rng = np.random.default_rng(314)
        listings = planted_run.files.corpus.listings
        dates = [lst.listed_date for lst in listings]
        shuffled = list(dates)
        rng.shuffle(shuffled)
        placebo = [
            Listing(
                id=lst.id, title=lst.title, description=lst.description,
                listed_date=shuffled[i], price_usd=lst.price_usd,
                shop_reviews=lst.shop_reviews, item_reviews=lst.item_reviews,
                rating=lst.rating, has_discount=lst.has_discount, category=lst.category,
            )
            for i, lst in enumerate(listings)
        ]
        write_corpus(placebo, workdir / "placebo.jsonl")
        doc = make_config_doc(corpus_name="placebo.jsonl")
        doc["regressions"] = [{"name": "baseline"}]
        doc.pop("ablation")
        config = parse_config(doc, base_dir=workdir)
        pipeline = PipelineRun(config, workdir / "placebo_run")
        pipeline.execute()
        block = json.loads(pipeline.regress_json.read_text())["specs"]["baseline"]
        beta = block["coefficients"]["after"]
        se = block["se"]["after"]
        assert abs(beta) < 2 * se, f"|beta|={abs(beta):.4f} not below 2*SE={2 * se:.4f}"


# -- 3: Shannon equivalence ---------------------------------------------------------------

def test_criterion_3_shannon_equivalence():
    with criterion(3, "exact-mode information equals brute-force Shannon MI (20 tables)"):
        rng = np.random.default_rng(2718)
        for _ in range(20):
            nx = int(rng.integers(2, 9))
            joint = rng.dirichlet(np.ones(nx * 2)).reshape(nx, 2)
            px = joint.sum(axis=1)
            py = joint.sum(axis=0)
            brute = 0.0
            for i in range(nx):
                for j in range(2):
                    if joint[i, j] > 0:
                        brute += joint[i, j] * math.log2(joint[i, j] / (px[i] * py[j]))
            assert abs(exact_vinformation(joint) - brute) <= 1e-9


# -- 4: log-score identity check ---------------------------------------------------------------------

def test_criterion_4_log_score_identity_and_argmax():
    with criterion(4, "value identity to 1e-9 and argmax agreement on 100 instances"):
        rng = np.random.default_rng(161803)
        agreements = 0
        for _ in range(100):
            env, taus = random_instance(rng, n_e=4, n_u=4, n_y=3, n_transformations=5)
            report = check_log_score_identity(env, taus)
            assert report.value_identity_ok
            assert max(r.identity_gap for r in report.rows) <= 1e-9
            agreements += report.argmax_agrees
        assert agreements == 100, f"argmax agreed in {agreements}/100 instances"


# -- 5: OLS oracle ------------------------------------------------------------------------------

def _fixture_table(values, after):
    n = len(values)
    return {
        "listing_id": [f"r{i}" for i in range(n)],
        "pvi": np.asarray(values, dtype=float),
        "period": ["post" if a else "pre" for a in after],
        "halfyear_bin": [""] * n,
        "price_usd": np.ones(n),
        "shop_reviews": np.zeros(n),
        "item_reviews": np.zeros(n),
        "rating": np.full(n, 4.5),
        "has_discount": np.zeros(n),
        "word_count": np.full(n, 10.0),
        "category": [None] * n,
    }


def test_criterion_5_ols_oracle():
    with criterion(5, "beta to 1e-10; HC0-HC3 vs independent sandwich oracle to 1e-8; "
                      "HC1/HC0 exact; F = t^2"):
        table = _fixture_table([0.0, 1.0, 1.0, 2.0], [0, 0, 1, 1])
        result = fit_ols(table, RegressionSpec())
        assert abs(result.coefficients["after"] - 1.0) <= 1e-10
        t = result.coefficients["after"] / result.se("after")
        assert abs(result.f_statistic - t * t) <= 1e-8

        rng = np.random.default_rng(55)
        n = 200
        after = rng.integers(0, 2, size=n)
        y = 0.2 + 0.4 * after + rng.normal(size=n) * (1 + after)
        big = _fixture_table(y, after)
        fitted = fit_ols(big, RegressionSpec())
        X, e = fitted.X, fitted.residuals
        xtx = np.zeros((2, 2))
        for i in range(n):
            xtx += np.outer(X[i], X[i])
        bread = np.linalg.inv(xtx)
        hat = np.array([X[i] @ bread @ X[i] for i in range(n)])
        for kind, weight in (
            ("HC0", np.ones(n)),
            ("HC1", np.ones(n)),
            ("HC2", 1.0 / (1.0 - hat)),
            ("HC3", 1.0 / (1.0 - hat) ** 2),
        ):
            meat = np.zeros((2, 2))
            for i in range(n):
                meat += weight[i] * e[i] ** 2 * np.outer(X[i], X[i])
            oracle = bread @ meat @ bread
            if kind == "HC1":
                oracle = oracle * n / (n - 2)
            assert np.abs(robust_cov(fitted, kind) - oracle).max() <= 1e-8
        hc0 = robust_cov(fitted, "HC0")
        hc1 = robust_cov(fitted, "HC1")
        assert np.array_equal(hc1, hc0 * (n / (n - 2)))


# -- 6: null-model entropy ---------------------------------------------------------------------

def _null_entropy(labels) -> float:
    model = fit_null(labels)
    records = []
    for i, y in enumerate(labels):
        rec = model.score("", listing_id=f"r{i}")
        records.append(make_record(f"r{i}", rec.log2_prob[y], rec.log2_prob[y], split="test"))
    return estimate(records).v_entropy


def test_criterion_6_null_model_entropy():
    with criterion(6, "null entropy: balanced 1.000 +- 0.001; 60/40 0.9710 +- 0.001"):
        assert abs(_null_entropy([0, 1] * 500) - 1.0) <= 0.001
        sixty_forty = _null_entropy([1] * 600 + [0] * 400)
        assert abs(sixty_forty - 0.9709505944546686) <= 0.001


# -- 7: partitioner fixtures ---------------------------------------------------------------------

def test_criterion_7_partitioner_fixtures():
    with criterion(7, "cutoff day is post; Nov-Dec 2022 -> 2023-H1; Jul-Oct 2022 -> REF"):
        from infoshift.corpus import halfyear_bin_for, partition
        listings = [
            Listing(id="cut", title="x", description="y", listed_date=date(2022, 11, 30)),
            Listing(id="nov", title="x", description="y", listed_date=date(2022, 11, 1)),
            Listing(id="dec", title="x", description="y", listed_date=date(2022, 12, 31)),
            Listing(id="ref1", title="x", description="y", listed_date=date(2022, 7, 1)),
            Listing(id="ref2", title="x", description="y", listed_date=date(2022, 10, 31)),
        ]
        assignments, diagnostics = partition(Corpus(listings), scheme="halfyear")
        assert not diagnostics
        by_id = {a.listing_id: a for a in assignments}
        assert by_id["cut"].period == "post"
        assert by_id["nov"].halfyear_bin == "2023-H1"
        assert by_id["dec"].halfyear_bin == "2023-H1"
        assert by_id["ref1"].halfyear_bin == "REF"
        assert by_id["ref2"].halfyear_bin == "REF"
        assert halfyear_bin_for(date(2022, 6, 30)) == "2022-H1"


# -- 8: seed stability ----------------------------------------------------------------------------

def test_criterion_8_seed_stability(planted_run, workdir):
    with criterion(8, "seeds (42,123,456,789,1024): beta spread < 0.03; byte-identical reruns"):
        doc = make_config_doc()
        doc["regressions"] = [{"name": "baseline"}]
        doc.pop("ablation")  # sweep focuses on the estimate, not the token table
        config = parse_config(doc, base_dir=workdir)
        report = seed_sweep(config, [42, 123, 456, 789, 1024], workdir / "sweep")
        assert report["beta_spread"] < 0.03, f"spread {report['beta_spread']:.4f}"

        rerun_a = workdir / "determinism_a"
        rerun_b = workdir / "determinism_b"
        run(config, rerun_a)
        run(config, rerun_b)
        assert _digest_tree(rerun_a) == _digest_tree(rerun_b)


# -- 9: ablation ------------------------------------------------------------------------------------

def test_criterion_9_ablation(planted_run):
    with criterion(9, "marker has max delta at support >= 25; fillers < 0.05; "
                      "removal idempotent on 1000-listing fuzz set"):
        marker = planted_run.files.spec.marker_token
        ablation_doc = planted_run.report["ablation"]
        assert ablation_doc["top_positive"], "no ranked tokens"
        top = ablation_doc["top_positive"][0]
        assert top["token"] == marker, f"top token {top['token']!r} is not the marker"
        assert top["N"] >= 25

        rows = {}
        import csv
        with (planted_run.run.out / "tables" / "ablation.csv").open() as fh:
            for row in csv.DictReader(fh):
                rows[row["token"]] = row
        marker_delta = float(rows[marker]["delta"])
        for token, row in rows.items():
            if token == marker or int(row["N"]) < 25:
                continue
            delta = float(row["delta"])
            assert abs(delta) < 0.05, f"filler {token!r} has |delta| {abs(delta):.4f}"
            assert delta < marker_delta

        rng = np.random.default_rng(99)
        listings = planted_run.files.corpus.listings
        picks = rng.choice(len(listings), size=1000, replace=False)
        vocab = [f"w{i:03d}" for i in range(200)] + [marker]
        for idx in picks:
            text = listings[int(idx)].text()
            token = vocab[int(rng.integers(0, len(vocab)))]
            once = remove_token(text, token)
            assert remove_token(once, token) == once


# -- 10: estimator identity ---------------------------------------------------------------------------

def test_criterion_10_estimator_identity(planted_run):
    with criterion(10, "mean(pointwise) equals entropy difference to 1e-12 on every set"):
        records = read_records(planted_run.run.pvi_csv)
        assert records
        for period in ("pre", "post"):
            subset = [r for r in records if r.period == period]
            est = estimate(subset)
            mean_pvi = float(np.mean([r.pvi for r in subset]))
            assert abs(mean_pvi - (est.v_entropy - est.conditional_v_entropy)) <= 1e-12
            assert abs(est.v_information - (est.v_entropy - est.conditional_v_entropy)) <= 1e-12
        pooled = [r for r in records]
        est = estimate(pooled)
        assert abs(float(np.mean([r.pvi for r in pooled]))
                   - (est.v_entropy - est.conditional_v_entropy)) <= 1e-12
