"""Client for external scorers speaking the v1 line protocol, plus an
in-repo stub server used by the test suite.

Wire format (newline-delimited JSON over a byte stream):

    handshake  -> {"version": "v1"}
    handshake  <- {"version": "v1", "ok": true}
    request    -> {"id", "mode": "score"|"label", "text", "labels": [pos, neg], "prompt_id"}
    response   <- {"id", "logprobs": {token: natural-log float}}
               <- {"id", "label": token}
               <- {"id", "error": {"code", "message"}}

Scorers emit natural-log values; this client converts them to base 2.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import socket
import socketserver
import threading
import time
from dataclasses import dataclass

from .errors import ConfigError, DataError
from .family import ScoreRecord

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = "v1"
LN2 = math.log(2.0)


@dataclass(frozen=True)
class ScoreError:
    """One failed request in the error manifest."""

    listing_id: str
    code: str
    message: str
    raw: str = ""


@dataclass
class ClientSettings:
    timeout: float = 10.0
    retries: int = 3
    backoff: float = 0.2
    max_inflight: int = 8
    renormalize: bool = False


def _parse_address(address: str) -> tuple[str, int]:
    if not address.startswith("tcp:"):
        raise ConfigError(f"unsupported scorer address {address!r} (expected tcp:host:port)")
    _, host, port = address.split(":", 2)
    return host, int(port)


class ScorerClient:
    """Batch client for the v1 protocol with bounded pipelining and retries."""

    def __init__(self, address: str, settings: ClientSettings | None = None):
        self.address = address
        self.settings = settings or ClientSettings()
        self._sock: socket.socket | None = None
        self._reader = None

    # -- connection management ------------------------------------------------

    def _connect(self) -> None:
        host, port = _parse_address(self.address)
        sock = socket.create_connection((host, port), timeout=self.settings.timeout)
        reader = sock.makefile("r", encoding="utf-8", newline="\n")
        sock.sendall((json.dumps({"version": PROTOCOL_VERSION}) + "\n").encode("utf-8"))
        line = reader.readline()
        try:
            ack = json.loads(line)
        except json.JSONDecodeError as exc:
            sock.close()
            raise DataError(f"handshake failed, raw response: {line!r}") from exc
        if ack.get("version") != PROTOCOL_VERSION or not ack.get("ok"):
            sock.close()
            raise DataError(f"scorer rejected handshake: {ack!r}")
        self._sock = sock
        self._reader = reader

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._reader = None

    def __enter__(self) -> "ScorerClient":
        return self

    def __exit__(self, *_exc) -> None:
        self.close()

    # -- request plumbing -----------------------------------------------------

    def _exchange_window(self, requests: list[dict]) -> dict[str, dict | Exception]:
        """Send one bounded window of requests, collect responses by id."""
        assert self._sock is not None
        out: dict[str, dict | Exception] = {}
        payload = "".join(json.dumps(r, sort_keys=True) + "\n" for r in requests)
        self._sock.sendall(payload.encode("utf-8"))
        pending = {r["id"] for r in requests}
        while pending:
            line = self._reader.readline()
            if not line:
                raise ConnectionError("scorer closed the connection mid-batch")
            try:
                resp = json.loads(line)
            except json.JSONDecodeError:
                raise DataError(f"malformed response line retained: {line!r}")
            rid = resp.get("id")
            if rid not in pending:
                raise DataError(f"response for unknown id {rid!r}: {line!r}")
            pending.discard(rid)
            out[rid] = resp
        return out

    def _run_batch(self, requests: list[dict]) -> tuple[dict[str, dict], list[ScoreError]]:
        responses: dict[str, dict] = {}
        errors: list[ScoreError] = []
        todo = list(requests)
        attempt = 0
        while todo and attempt <= self.settings.retries:
            if attempt:
                time.sleep(self.settings.backoff * (2 ** (attempt - 1)))
                self.close()
            failed: list[dict] = []
            try:
                if self._sock is None:
                    self._connect()
                window = self.settings.max_inflight
                for start in range(0, len(todo), window):
                    chunk = todo[start:start + window]
                    try:
                        got = self._exchange_window(chunk)
                    except (OSError, ConnectionError, DataError) as exc:
                        logger.warning("scorer batch attempt %d failed: %s", attempt, exc)
                        failed.extend(chunk)
                        self.close()
                        continue
                    for req in chunk:
                        resp = got[req["id"]]
                        if "error" in resp:
                            errors.append(ScoreError(
                                listing_id=req["id"],
                                code=str(resp["error"].get("code", "remote")),
                                message=str(resp["error"].get("message", "")),
                                raw=json.dumps(resp, sort_keys=True),
                            ))
                        else:
                            responses[req["id"]] = resp
            except (OSError, ConnectionError, DataError) as exc:
                logger.warning("scorer connection attempt %d failed: %s", attempt, exc)
                failed = todo
                self.close()
            todo = failed
            attempt += 1
        for req in todo:
            errors.append(ScoreError(req["id"], "unreachable", f"no response after {self.settings.retries} retries"))
        return responses, errors

    # -- public operations ------------------------------------------------------

    def score_batch(
        self,
        items: list[tuple[str, str]],
        labels: tuple[str, str],
        prompt_id: str = "V4",
    ) -> tuple[list[ScoreRecord], list[ScoreError]]:
        """Score (id, text) pairs; returns records in input order plus an error manifest.

        Natural-log responses are converted to base 2 by dividing by ln 2.
        With ``renormalize`` the two-point distribution is renormalized first;
        by default values are converted as returned.
        """
        if not items:
            return [], []
        requests = [
            {"id": rid, "mode": "score", "text": text, "labels": list(labels), "prompt_id": prompt_id}
            for rid, text in items
        ]
        responses, errors = self._run_batch(requests)
        failed_ids = {e.listing_id for e in errors}
        records: list[ScoreRecord] = []
        for rid, _text in items:
            if rid in failed_ids or rid not in responses:
                continue
            resp = responses[rid]
            logprobs = resp.get("logprobs")
            if not isinstance(logprobs, dict) or set(labels) - set(logprobs):
                errors.append(ScoreError(rid, "protocol", "missing logprobs for both tokens",
                                         raw=json.dumps(resp, sort_keys=True)))
                continue
            lp_pos = float(logprobs[labels[0]])
            lp_neg = float(logprobs[labels[1]])
            if not (math.isfinite(lp_pos) and math.isfinite(lp_neg)):
                errors.append(ScoreError(rid, "protocol", "non-finite logprob",
                                         raw=json.dumps(resp, sort_keys=True)))
                continue
            if self.settings.renormalize:
                norm = math.log(math.exp(lp_pos) + math.exp(lp_neg))
                lp_pos, lp_neg = lp_pos - norm, lp_neg - norm
            records.append(ScoreRecord(
                listing_id=rid,
                log2_prob={1: lp_pos / LN2, 0: lp_neg / LN2},
                model_role="content",
            ))
        return records, errors

    def label_batch(
        self,
        items: list[tuple[str, str]],
        labels: tuple[str, str],
        prompt_id: str = "V4",
    ) -> tuple[dict[str, int], list[ScoreError]]:
        """Request labels; returns {id: 0/1} plus an error manifest."""
        if not items:
            return {}, []
        requests = [
            {"id": rid, "mode": "label", "text": text, "labels": list(labels), "prompt_id": prompt_id}
            for rid, text in items
        ]
        responses, errors = self._run_batch(requests)
        out: dict[str, int] = {}
        for rid, _text in items:
            resp = responses.get(rid)
            if resp is None:
                continue
            token = resp.get("label")
            if token not in labels:
                errors.append(ScoreError(rid, "protocol", f"label {token!r} not in token pair",
                                         raw=json.dumps(resp, sort_keys=True)))
                continue
            out[rid] = 1 if token == labels[0] else 0
        return out, errors


def score_external(
    address: str,
    items: list[tuple[str, str]],
    labels: tuple[str, str],
    prompt_id: str = "V4",
    settings: ClientSettings | None = None,
) -> tuple[list[ScoreRecord], list[ScoreError]]:
    """One-shot convenience wrapper around :class:`ScorerClient.score_batch`."""
    with ScorerClient(address, settings) as client:
        return client.score_batch(items, labels, prompt_id)


# ---------------------------------------------------------------------------
# Deterministic mock scoring (shared contract with the sidecar's mock backend)
# ---------------------------------------------------------------------------

def mock_positive_probability(text: str, prompt_id: str) -> float:
    """Pseudo-probability from sha256(prompt_id + 0x1f + text), in [0.05, 0.95]."""
    digest = hashlib.sha256(f"{prompt_id}\x1f{text}".encode("utf-8")).hexdigest()
    u = int(digest[:8], 16) / 0xFFFFFFFF
    return 0.05 + 0.9 * u


def mock_response(request: dict) -> dict:
    """Reference response for one protocol request (mirrors the sidecar mock)."""
    rid = request.get("id")
    mode = request.get("mode")
    labels = request.get("labels") or []
    prompt_id = request.get("prompt_id", "")
    if rid is None or mode not in ("score", "label"):
        return {"id": rid, "error": {"code": "bad_request", "message": "id and valid mode required"}}
    if prompt_id not in ("V1", "V2", "V3", "V4", "dailymed", "rephrase", "custom"):
        return {"id": rid, "error": {"code": "unknown_prompt", "message": f"prompt_id {prompt_id!r}"}}
    if len(labels) != 2:
        return {"id": rid, "error": {"code": "bad_request", "message": "labels must list two tokens"}}
    p = mock_positive_probability(str(request.get("text", "")), prompt_id)
    if mode == "label":
        return {"id": rid, "label": labels[0] if p >= 0.5 else labels[1]}
    return {"id": rid, "logprobs": {labels[0]: math.log(p), labels[1]: math.log(1.0 - p)}}


class _StubHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        line = self.rfile.readline()
        try:
            hello = json.loads(line)
        except json.JSONDecodeError:
            return
        if hello.get("version") != PROTOCOL_VERSION:
            self.wfile.write(b'{"ok": false, "error": "unsupported version"}\n')
            return
        self.wfile.write((json.dumps({"version": PROTOCOL_VERSION, "ok": True}) + "\n").encode("utf-8"))
        server: StubScorerServer = self.server  # type: ignore[assignment]
        for raw in self.rfile:
            try:
                request = json.loads(raw)
            except json.JSONDecodeError:
                self.wfile.write(b'{"id": null, "error": {"code": "bad_json", "message": ""}}\n')
                continue
            if server.drop_first_n > 0:
                server.drop_first_n -= 1
                return  # simulate a connection drop mid-batch
            response = server.respond(request)
            self.wfile.write((json.dumps(response, sort_keys=True) + "\n").encode("utf-8"))


class StubScorerServer(socketserver.ThreadingTCPServer):
    """In-repo protocol stub for exercising the external path without a sidecar.

    ``canned`` maps request id to a fixed response; unmatched requests fall
    through to the deterministic mock. ``drop_first_n`` force-closes that many
    connections mid-batch to exercise client retries.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, canned: dict[str, dict] | None = None, drop_first_n: int = 0):
        super().__init__(("127.0.0.1", 0), _StubHandler)
        self.canned = canned or {}
        self.drop_first_n = drop_first_n
        self._thread: threading.Thread | None = None

    def respond(self, request: dict) -> dict:
        rid = request.get("id")
        if rid in self.canned:
            return {"id": rid, **self.canned[rid]}
        return mock_response(request)

    @property
    def address(self) -> str:
        host, port = self.server_address
        return f"tcp:{host}:{port}"

    def start(self) -> "StubScorerServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
