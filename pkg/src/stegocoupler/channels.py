"""Autoregressive covertext channels.

A channel exposes the next-token distribution conditioned on the tokens
emitted so far. Built-in channels (uniform, scripted, order-n Markov) are
fully deterministic given their configuration; remote channels speak a
newline-delimited JSON protocol to an external model adapter. Truncation
(top-k / top-p) renormalizes the conditional before it reaches the codec.
"""

from __future__ import annotations

import json
import socket
import subprocess
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ChannelError,
    ProtocolViolationError,
    RemoteUnavailableError,
    UnknownTokenError,
)
from .probability import Categorical

DEFAULT_MARKOV_ALPHA = 0.1


@dataclass(frozen=True)
class Truncation:
    """Support truncation rule: ``top_k`` keeps the k most probable tokens,
    ``top_p`` the smallest probability-sorted prefix of cumulative mass at
    least p. Ties in probability go to the lower token id."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "top_k":
            if int(self.value) < 1:
                raise ChannelError("top_k must keep at least one token")
        elif self.kind == "top_p":
            if not 0.0 < float(self.value) <= 1.0:
                raise ChannelError("top_p must lie in (0, 1]")
        else:
            raise ChannelError(f"unknown truncation kind: {self.kind!r}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_json(cls, obj: dict) -> "Truncation":
        return cls(obj["kind"], obj["value"])


def truncate(d: Categorical, rule: Truncation | None) -> Categorical:
    """Apply a truncation rule and renormalize; None passes through."""
    if rule is None:
        return d
    order = np.lexsort((d.ids, -d.probs))
    if rule.kind == "top_k":
        k = int(rule.value)
        if k >= len(d):
            return d
        keep = order[:k]
    else:
        p = float(rule.value)
        if p >= 1.0:
            return d
        csum = np.cumsum(d.probs[order])
        cut = int(np.searchsorted(csum, p, side="left")) + 1
        if cut >= len(d):
            return d
        keep = order[:cut]
    return Categorical(d.ids[keep], d.probs[keep])


class Channel(ABC):
    """Autoregressive token source.

    ``next_dist`` must be a pure function of the context: repeated calls
    without an intervening ``append`` return identical distributions, and
    two instances with equal configuration and context agree bitwise.
    """

    def __init__(self):
        self._context: list[int] = []

    @property
    def context(self) -> tuple[int, ...]:
        return tuple(self._context)

    @property
    @abstractmethod
    def vocab_size(self) -> int | None:
        """Vocabulary size, or None when only the remote side knows it."""

    @abstractmethod
    def next_dist(self) -> Categorical:
        """Distribution of the next token given the current context."""

    @abstractmethod
    def render(self, tokens) -> str:
        """Human-readable form of a token sequence."""

    def append(self, token_id: int) -> None:
        """Extend the context by one emitted token."""
        self._validate_token(int(token_id))
        self._context.append(int(token_id))

    def reset(self, context_text: str = "") -> None:
        """Clear the context; ``context_text`` seeds channels that accept a
        textual prefix and is ignored by the others."""
        self._context.clear()

    def _validate_token(self, token_id: int) -> None:
        size = self.vocab_size
        if size is not None and not 0 <= token_id < size:
            raise UnknownTokenError(
                f"unknown-token: {token_id} outside vocabulary of size {size}"
            )


class TruncatedChannel(Channel):
    """Wrapper applying a truncation rule to another channel's conditionals."""

    def __init__(self, inner: Channel, rule: Truncation):
        super().__init__()
        self.inner = inner
        self.rule = rule

    @property
    def context(self) -> tuple[int, ...]:
        return self.inner.context

    @property
    def vocab_size(self) -> int | None:
        return self.inner.vocab_size

    def next_dist(self) -> Categorical:
        return truncate(self.inner.next_dist(), self.rule)

    def append(self, token_id: int) -> None:
        self.inner.append(token_id)

    def reset(self, context_text: str = "") -> None:
        self.inner.reset(context_text)

    def render(self, tokens) -> str:
        return self.inner.render(tokens)


class UniformChannel(Channel):
    """Uniform distribution over ``k`` token ids at every step."""

    def __init__(self, k: int):
        super().__init__()
        if k < 1:
            raise ChannelError("uniform channel needs at least one symbol")
        self._k = int(k)
        self._dist = Categorical.uniform(self._k)

    @property
    def vocab_size(self) -> int:
        return self._k

    def next_dist(self) -> Categorical:
        return self._dist

    def render(self, tokens) -> str:
        return " ".join(str(int(t)) for t in tokens)


class ScriptedChannel(Channel):
    """Replays a fixed per-step list of distributions, cycling at the end."""

    def __init__(self, steps: list[Categorical]):
        super().__init__()
        if not steps:
            raise ChannelError("scripted channel needs at least one step")
        self._steps = list(steps)
        self._vocab = frozenset(
            int(t) for step in self._steps for t in step.ids
        )

    @classmethod
    def load(cls, path) -> "ScriptedChannel":
        obj = json.loads(Path(path).read_text())
        return cls([Categorical.from_json(step) for step in obj["steps"]])

    @property
    def vocab_size(self) -> int:
        return max(self._vocab) + 1

    def _validate_token(self, token_id: int) -> None:
        if token_id not in self._vocab:
            raise UnknownTokenError(
                f"unknown-token: {token_id} not in scripted vocabulary"
            )

    def next_dist(self) -> Categorical:
        return self._steps[len(self._context) % len(self._steps)]

    def render(self, tokens) -> str:
        return " ".join(str(int(t)) for t in tokens)


class MarkovChannel(Channel):
    """Character-level order-n model with add-alpha smoothing.

    Conditionals are count ratios over the corpus alphabet; contexts shorter
    than the order or never seen in the corpus back off to uniform.
    """

    def __init__(self, corpus: str, order: int, alpha: float = DEFAULT_MARKOV_ALPHA):
        super().__init__()
        if order < 1:
            raise ChannelError("markov order must be at least 1")
        if alpha <= 0:
            raise ChannelError("smoothing alpha must be positive")
        if len(corpus) <= order:
            raise ChannelError("corpus shorter than the model order")
        self.order = int(order)
        self.alpha = float(alpha)
        self.alphabet = sorted(set(corpus))
        self._char_to_id = {c: i for i, c in enumerate(self.alphabet)}
        size = len(self.alphabet)
        encoded = [self._char_to_id[c] for c in corpus]
        counts: dict[tuple[int, ...], np.ndarray] = {}
        for pos in range(len(encoded) - order):
            ctx = tuple(encoded[pos:pos + order])
            row = counts.get(ctx)
            if row is None:
                row = np.zeros(size, dtype=np.float64)
                counts[ctx] = row
            row[encoded[pos + order]] += 1.0
        self._counts = counts
        self._uniform = Categorical.uniform(size)
        self._ids = np.arange(size, dtype=np.int64)

    @classmethod
    def from_corpus_file(cls, path, order: int,
                         alpha: float = DEFAULT_MARKOV_ALPHA) -> "MarkovChannel":
        return cls(Path(path).read_text(encoding="utf-8"), order, alpha)

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    def next_dist(self) -> Categorical:
        if len(self._context) < self.order:
            return self._uniform
        row = self._counts.get(tuple(self._context[-self.order:]))
        if row is None:
            return self._uniform
        return Categorical(self._ids, row + self.alpha)

    def reset(self, context_text: str = "") -> None:
        self._context.clear()
        for c in context_text:
            if c not in self._char_to_id:
                raise UnknownTokenError(f"unknown-token: {c!r} not in alphabet")
            self._context.append(self._char_to_id[c])

    def render(self, tokens) -> str:
        out = []
        for t in tokens:
            self._validate_token(int(t))
            out.append(self.alphabet[int(t)])
        return "".join(out)


class LineTransport:
    """Newline-delimited JSON over a pair of binary streams."""

    def __init__(self, writer, reader, closer=None):
        self._writer = writer
        self._reader = reader
        self._closer = closer

    def send_line(self, line: str) -> None:
        try:
            self._writer.write(line.encode("utf-8") + b"\n")
            self._writer.flush()
        except (OSError, ValueError) as exc:
            raise RemoteUnavailableError(f"remote-unavailable: {exc}") from exc

    def recv_line(self) -> str:
        try:
            raw = self._reader.readline()
        except (OSError, ValueError) as exc:
            raise RemoteUnavailableError(f"remote-unavailable: {exc}") from exc
        if not raw:
            raise RemoteUnavailableError("remote-unavailable: connection closed")
        return raw.decode("utf-8")

    def close(self) -> None:
        if self._closer is not None:
            self._closer()


def tcp_transport(host: str, port: int, timeout: float = 30.0) -> LineTransport:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise RemoteUnavailableError(f"remote-unavailable: {exc}") from exc
    stream = sock.makefile("rwb")
    return LineTransport(stream, stream, sock.close)


def subprocess_transport(argv: list[str]) -> tuple[LineTransport, subprocess.Popen]:
    """Spawn an adapter process and talk to it over stdio."""
    proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    return LineTransport(proc.stdin, proc.stdout, proc.terminate), proc


class RemoteChannel(Channel):
    """Client for model-backed channels behind the wire protocol.

    Requests are strictly sequential with monotonically increasing ids.
    Conditionals are memoized per context so encoder-side and audit-side
    queries within a run agree bitwise.
    """

    def __init__(self, transport: LineTransport, context_text: str = ""):
        super().__init__()
        self._transport = transport
        self._next_id = 0
        self._cache: dict[tuple[int, ...], Categorical] = {}
        self._request("reset", context_text=context_text)

    @property
    def vocab_size(self) -> int | None:
        return None

    def _request(self, op: str, **fields) -> dict:
        self._next_id += 1
        payload = {"id": self._next_id, "op": op, **fields}
        self._transport.send_line(json.dumps(payload))
        line = self._transport.recv_line()
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolationError(
                f"protocol-violation: unparseable reply {line!r}"
            ) from exc
        if not isinstance(reply, dict) or reply.get("id") != self._next_id:
            raise ProtocolViolationError(
                f"protocol-violation: reply id mismatch in {reply!r}"
            )
        if "error" in reply:
            raise ChannelError(f"remote error: {reply['error']}", code="remote-error")
        return reply

    def next_dist(self) -> Categorical:
        key = tuple(self._context)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        reply = self._request("next_dist")
        ids = reply.get("ids")
        probs = reply.get("probs")
        if not isinstance(ids, list) or not isinstance(probs, list) \
                or len(ids) != len(probs):
            raise ProtocolViolationError(
                "protocol-violation: next_dist reply missing ids/probs"
            )
        try:
            dist = Categorical(ids, probs)
        except ValueError as exc:
            raise ProtocolViolationError(
                f"protocol-violation: invalid distribution ({exc})"
            ) from exc
        self._cache[key] = dist
        return dist

    def append(self, token_id: int) -> None:
        reply = self._request("append", token=int(token_id))
        if reply.get("ok") is not True:
            raise ProtocolViolationError(
                f"protocol-violation: append not acknowledged in {reply!r}"
            )
        self._context.append(int(token_id))

    def reset(self, context_text: str = "") -> None:
        self._request("reset", context_text=context_text)
        self._context.clear()
        self._cache.clear()

    def render(self, tokens) -> str:
        reply = self._request("render", tokens=[int(t) for t in tokens])
        text = reply.get("text")
        if not isinstance(text, str):
            raise ProtocolViolationError(
                f"protocol-violation: render reply missing text in {reply!r}"
            )
        return text

    def close(self) -> None:
        self._transport.close()


@dataclass(frozen=True)
class ChannelSpec:
    """Declarative channel description; the encoder and decoder each build
    their own instance from the same spec."""

    kind: str
    params: dict
    truncation: Truncation | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "markov", "scripted", "remote"):
            raise ChannelError(f"unknown channel kind: {self.kind!r}")

    def build(self) -> Channel:
        if self.kind == "uniform":
            inner: Channel = UniformChannel(int(self.params["k"]))
        elif self.kind == "markov":
            inner = MarkovChannel.from_corpus_file(
                self.params["path"],
                int(self.params["order"]),
                float(self.params.get("alpha", DEFAULT_MARKOV_ALPHA)),
            )
        elif self.kind == "scripted":
            inner = ScriptedChannel.load(self.params["path"])
        else:
            inner = RemoteChannel(
                tcp_transport(self.params["host"], int(self.params["port"])),
                context_text=self.params.get("context_text", ""),
            )
        if self.truncation is None:
            return inner
        return TruncatedChannel(inner, self.truncation)

    def to_json(self) -> dict:
        obj = {"kind": self.kind, "params": dict(self.params)}
        if self.truncation is not None:
            obj["truncation"] = self.truncation.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ChannelSpec":
        rule = obj.get("truncation")
        return cls(
            obj["kind"],
            dict(obj["params"]),
            Truncation.from_json(rule) if rule else None,
        )


def parse_channel_spec(text: str) -> ChannelSpec:
    """Parse the CLI mini-grammar.

    Forms: ``uniform:K``, ``markov:ORDER:PATH``, ``scripted:PATH``,
    ``remote:HOST:PORT``, each optionally suffixed with ``+topk=K`` or
    ``+topp=P``.
    """
    body = text
    rule = None
    if "+" in text:
        body, _, suffix = text.partition("+")
        if suffix.startswith("topk="):
            rule = Truncation("top_k", int(suffix[5:]))
        elif suffix.startswith("topp="):
            rule = Truncation("top_p", float(suffix[5:]))
        else:
            raise ChannelError(f"unknown channel suffix: +{suffix}")
    kind, _, rest = body.partition(":")
    try:
        if kind == "uniform":
            params = {"k": int(rest)}
        elif kind == "markov":
            order, _, path = rest.partition(":")
            if not path:
                raise ValueError("markov spec needs ORDER:PATH")
            params = {"order": int(order), "path": path}
        elif kind == "scripted":
            if not rest:
                raise ValueError("scripted spec needs PATH")
            params = {"path": rest}
        elif kind == "remote":
            host, _, port = rest.rpartition(":")
            if not host:
                raise ValueError("remote spec needs HOST:PORT")
            params = {"host": host, "port": int(port)}
        else:
            raise ValueError(f"unknown channel kind {kind!r}")
    except ValueError as exc:
        raise ChannelError(f"bad channel spec {text!r}: {exc}") from exc
    return ChannelSpec(kind, params, rule)
