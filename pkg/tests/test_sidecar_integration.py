"""Conformance of the standalone sidecar against the Python client.

These tests need the sidecar build (``npm run build`` under sidecar/) and
skip cleanly when it is absent, so the primary suite never depends on it.
"""

from __future__ import annotations

import json
import math
import re
import subprocess
import time
from pathlib import Path

import pytest

from infoshift.external import ClientSettings, ScorerClient, mock_positive_probability

SIDECAR_MAIN = Path(__file__).resolve().parent.parent / "sidecar" / "dist" / "main.js"
FIXTURES = Path(__file__).resolve().parent.parent / "sidecar" / "fixtures"

pytestmark = pytest.mark.skipif(not SIDECAR_MAIN.is_file(),
                                reason="sidecar not built (run npm run build under sidecar/)")


@pytest.fixture(scope="module")
def sidecar_address():
    proc = subprocess.Popen(
        ["node", str(SIDECAR_MAIN), "serve", "--transport", "tcp", "--port", "0",
         "--backend", "mock"],
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        line = proc.stderr.readline()
        match = re.search(r"tcp:([\d.]+):(\d+)", line)
        assert match, f"sidecar did not report its address: {line!r}"
        yield f"tcp:{match.group(1)}:{match.group(2)}"
    finally:
        proc.terminate()
        proc.wait(timeout=5)


def test_score_round_trip_matches_shared_mock(sidecar_address):
    items = [("a", "handmade walnut serving board"), ("b", ""), ("c", "vintage compass")]
    with ScorerClient(sidecar_address, ClientSettings()) as client:
        records, errors = client.score_batch(items, ("SELECT", "PASS"), prompt_id="V4")
    assert not errors
    for (rid, text), rec in zip(items, records):
        assert rec.listing_id == rid
        p = mock_positive_probability(text, "V4")
        assert abs(rec.log2_prob[1] - math.log(p) / math.log(2)) < 1e-12
        assert abs(rec.log2_prob[0] - math.log(1 - p) / math.log(2)) < 1e-12


def test_empty_text_null_convention_over_the_wire(sidecar_address):
    with ScorerClient(sidecar_address, ClientSettings()) as client:
        first, _ = client.score_batch([("n1", "")], ("SELECT", "PASS"), prompt_id="V4")
        second, _ = client.score_batch([("n2", "")], ("SELECT", "PASS"), prompt_id="V4")
    assert first[0].log2_prob == second[0].log2_prob


def test_golden_fixtures_round_trip_over_the_wire(sidecar_address):
    requests = [json.loads(line) for line in
                (FIXTURES / "golden_requests.jsonl").read_text().splitlines()]
    expected = [json.loads(line) for line in
                (FIXTURES / "golden_responses.jsonl").read_text().splitlines()]
    score_reqs = [r for r in requests if r["mode"] == "score"
                  and r["prompt_id"] in ("V1", "V2", "V3", "V4", "dailymed")
                  and len(r["labels"]) == 2]
    by_id = {r["id"]: r for r in expected}
    with ScorerClient(sidecar_address, ClientSettings()) as client:
        for req in score_reqs:
            records, errors = client.score_batch(
                [(req["id"], req["text"])], tuple(req["labels"]), prompt_id=req["prompt_id"])
            assert not errors
            want = by_id[req["id"]]["logprobs"]
            got = records[0]
            ln2 = math.log(2.0)
            assert abs(got.log2_prob[1] - want[req["labels"][0]] / ln2) < 1e-12
            assert abs(got.log2_prob[0] - want[req["labels"][1]] / ln2) < 1e-12


def test_label_batch_over_the_wire(sidecar_address):
    items = [(f"i{k}", f"listing text {k}") for k in range(6)]
    with ScorerClient(sidecar_address, ClientSettings()) as client:
        labels, errors = client.label_batch(items, ("SELECT", "PASS"), prompt_id="V1")
    assert not errors
    for rid, text in items:
        expected = 1 if mock_positive_probability(text, "V1") >= 0.5 else 0
        assert labels[rid] == expected
