"""Request loop implementing the covertext-channel wire protocol.

Newline-delimited JSON, one reply per request, strictly sequential:

    -> {"id": u64, "op": "reset", "context_text": str}    <- {"id", "ok": true}
    -> {"id": u64, "op": "next_dist"}                     <- {"id", "ids": [...], "probs": [...]}
    -> {"id": u64, "op": "append", "token": u32}          <- {"id", "ok": true}
    -> {"id": u64, "op": "render", "tokens": [u32...]}    <- {"id", "text": str}

Failures are answered as {"id": u64, "error": str}; requests whose id cannot
be recovered get id 0. Truncation (top-k or top-p) happens here, before
serialization, so clients never see the full vocabulary. Probabilities are
emitted as shortest-roundtrip decimals, which reconstruct bit-identical
float64 values on the client. Replies are cached per context, so repeated
identical queries return byte-identical payloads. Sampling never happens on
this side; the encoder owns all randomness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdapterConfig:
    """Server configuration; at most one truncation rule may be set."""

    model: str
    device: str = "cpu"
    top_k: int | None = None
    top_p: float | None = None

    def __post_init__(self):
        if self.top_k is not None and self.top_p is not None:
            raise ValueError("choose either top_k or top_p, not both")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.top_p is not None and not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must lie in (0, 1]")


def truncate_probs(probs: np.ndarray, top_k: int | None,
                   top_p: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Keep the top-k tokens or the smallest prefix of cumulative mass >= p
    (ties to the lower token id), renormalized; returns (ids, probs) with
    ids ascending."""
    ids = np.arange(probs.size)
    order = np.lexsort((ids, -probs))
    if top_k is not None:
        keep = order[:min(top_k, probs.size)]
    elif top_p is not None and top_p < 1.0:
        csum = np.cumsum(probs[order])
        cut = int(np.searchsorted(csum, top_p, side="left")) + 1
        keep = order[:min(cut, probs.size)]
    else:
        keep = order
    keep = np.sort(keep)
    kept = probs[keep]
    return keep, kept / kept.sum()


class AdapterServer:
    """Protocol state machine over one backend; serves one peer at a time."""

    def __init__(self, backend, config: AdapterConfig):
        self.backend = backend
        self.config = config
        self._context: list[int] = []
        self._dist_cache: dict[tuple[int, ...], tuple[list[int], list[float]]] = {}

    def _next_dist(self) -> tuple[list[int], list[float]]:
        key = tuple(self._context)
        hit = self._dist_cache.get(key)
        if hit is None:
            probs = self.backend.next_probs(key)
            ids, kept = truncate_probs(probs, self.config.top_k,
                                       self.config.top_p)
            hit = ([int(t) for t in ids], [float(p) for p in kept])
            self._dist_cache[key] = hit
        return hit

    def handle(self, request: dict) -> dict:
        rid = request.get("id")
        if not isinstance(rid, int):
            return {"id": 0, "error": "malformed-request: missing integer id"}
        op = request.get("op")
        try:
            if op == "reset":
                text = request.get("context_text", "")
                if not isinstance(text, str):
                    return {"id": rid,
                            "error": "malformed-request: context_text must be a string"}
                self._context = self.backend.encode_text(text)
                return {"id": rid, "ok": True}
            if op == "next_dist":
                ids, probs = self._next_dist()
                return {"id": rid, "ids": ids, "probs": probs}
            if op == "append":
                token = request.get("token")
                if not isinstance(token, int):
                    return {"id": rid,
                            "error": "malformed-request: token must be an integer"}
                if not 0 <= token < self.backend.vocab_size:
                    return {"id": rid,
                            "error": f"unknown-token: {token} outside vocabulary "
                                     f"of size {self.backend.vocab_size}"}
                self._context.append(token)
                return {"id": rid, "ok": True}
            if op == "render":
                tokens = request.get("tokens")
                if not isinstance(tokens, list) or not all(
                        isinstance(t, int) and 0 <= t < self.backend.vocab_size
                        for t in tokens):
                    return {"id": rid,
                            "error": "malformed-request: tokens must be vocabulary ids"}
                return {"id": rid, "text": self.backend.decode_ids(tokens)}
            return {"id": rid, "error": f"unknown-op: {op!r}"}
        except Exception as exc:  # model failure must not kill the loop
            return {"id": rid, "error": f"model-failure: {exc}"}

    def handle_line(self, line: str) -> str:
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("not an object")
        except ValueError:
            return json.dumps({"id": 0, "error": "malformed-request: not a JSON object"})
        return json.dumps(self.handle(request))

    def serve(self, reader, writer) -> None:
        """Blocking request loop over binary line streams; returns cleanly
        when the peer closes the connection."""
        while True:
            try:
                line = reader.readline()
            except OSError:
                return
            if not line:
                return
            reply = self.handle_line(line.decode("utf-8"))
            try:
                writer.write(reply.encode("utf-8") + b"\n")
                writer.flush()
            except OSError:
                return
