"""Iterative coupling codec: encodes uniform ciphertext blocks into channel
tokens and decodes them back by exact posterior tracking.

Encoding keeps one belief per ciphertext block, initialized uniform over the
2^B block values. Each step couples the highest-entropy belief with the
channel's next-token conditional, samples the stegotoken from the coupling
row of the true block value, and conditions the belief on that token. The
coupling phase runs while any belief's entropy is at or above the threshold;
afterwards the encoder may pad with pure covertext up to ``min_tokens``.
Decoding replays the identical deterministic iteration, conditioning on the
observed tokens instead of sampling, so both sides reconstruct bitwise-equal
states.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .channels import Channel, ChannelSpec
from .cipher import Ciphertext, unpack_blocks
from .coupling import SparseCoupling, col_conditional, greedy_mec, row_conditional
from .errors import (
    CodecError,
    InsufficientTokensError,
    NonterminationError,
    PosteriorCollapseError,
)
from .probability import Categorical, Rng, entropy, sample

DEFAULT_THRESHOLD = 0.1
DEFAULT_MAX_TOKENS = 100_000

_uniform_support_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _uniform_support(block_bits: int) -> tuple[np.ndarray, np.ndarray]:
    # Shared read-only (ids, probs) arrays for the initial uniform belief.
    cached = _uniform_support_cache.get(block_bits)
    if cached is None:
        size = 1 << block_bits
        ids = np.arange(size, dtype=np.int64)
        probs = np.full(size, 1.0 / size)
        ids.setflags(write=False)
        probs.setflags(write=False)
        cached = (ids, probs)
        _uniform_support_cache[block_bits] = cached
    return cached


class BlockPosterior:
    """Belief over one block's 2^B values, with a cached entropy.

    Stored as the pruned categorical over values with positive mass; the
    dense 2^B vector is available through ``dense_probs``.
    """

    __slots__ = ("index", "block_bits", "dist", "entropy_bits")

    def __init__(self, index: int, block_bits: int):
        self.index = index
        self.block_bits = block_bits
        ids, probs = _uniform_support(block_bits)
        self.dist = Categorical(ids, probs)
        self.entropy_bits = float(block_bits)

    def update(self, dist: Categorical) -> None:
        self.dist = dist
        self.entropy_bits = entropy(dist)

    def prob_of(self, value: int) -> float:
        pos = self.dist.index_of(int(value))
        return float(self.dist.probs[pos]) if pos >= 0 else 0.0

    def map_value(self) -> int:
        """Most probable block value; ties go to the lowest value."""
        return int(self.dist.ids[int(np.argmax(self.dist.probs))])

    def dense_probs(self) -> np.ndarray:
        dense = np.zeros(1 << self.block_bits)
        dense[self.dist.ids] = self.dist.probs
        return dense


@dataclass
class StepRecord:
    """One coupling step as seen by an observer callback.

    Observers receive every field the audit and the golden-trace tests need;
    the codec never retains records itself.
    """

    step: int
    block: int
    channel_dist: Categorical
    coupling: SparseCoupling
    token: int
    posterior_before_entropy: float
    posterior_after: Categorical
    channel_seconds: float
    coupling_seconds: float


StepObserver = Callable[[StepRecord], None]


class CodecState:
    """Deterministic shared state of the encoder and decoder.

    After j tokens the state is a pure function of (block count, block size,
    threshold, channel, first j stegotokens).
    """

    def __init__(self, n_blocks: int, block_bits: int, threshold: float,
                 channel: Channel):
        if n_blocks < 1:
            raise CodecError("need at least one ciphertext block")
        if threshold <= 0.0:
            raise CodecError("entropy threshold must be positive")
        self.block_bits = block_bits
        self.threshold = threshold
        self.channel = channel
        self.posteriors = [BlockPosterior(i, block_bits) for i in range(n_blocks)]
        self.entropies = np.full(n_blocks, float(block_bits))
        self.step = 0

    @property
    def phase(self) -> str:
        return "passthrough" if self.max_entropy() < self.threshold else "coupling"

    def max_entropy(self) -> float:
        return float(self.entropies.max())

    def select_block(self) -> int | None:
        """Index of the maximal-entropy block (ties to the lowest index), or
        None once every block is below the threshold."""
        i_star = int(np.argmax(self.entropies))
        if self.entropies[i_star] < self.threshold:
            return None
        return i_star

    def couple(self, i_star: int, channel_dist: Categorical
               ) -> tuple[Categorical, SparseCoupling]:
        mu = self.posteriors[i_star].dist
        return mu, greedy_mec(mu, channel_dist)

    def absorb(self, i_star: int, coupling: SparseCoupling, token: int
               ) -> Categorical:
        """Condition block ``i_star`` on an emitted token and advance."""
        col = coupling.right_marginal.index_of(int(token))
        if col < 0:
            raise CodecError(
                f"stegotoken {token} outside the channel conditional at "
                f"step {self.step}",
                code="unsupported-token",
            )
        posterior = col_conditional(coupling, col)
        self.posteriors[i_star].update(posterior)
        self.entropies[i_star] = self.posteriors[i_star].entropy_bits
        self.step += 1
        return posterior


def encode(ciphertext: Ciphertext, channel: Channel, rng: Rng, *,
           threshold: float = DEFAULT_THRESHOLD, min_tokens: int = 0,
           max_tokens: int = DEFAULT_MAX_TOKENS,
           observer: StepObserver | None = None) -> list[int]:
    """Encode a packed ciphertext into a stegotoken sequence.

    Runs the coupling phase until every block posterior's entropy falls
    below ``threshold``, then pads with plain channel samples up to
    ``min_tokens``.

    Args:
        ciphertext: Packed ciphertext (defines block size and count).
        channel: Covertext channel; consumed and advanced in place.
        rng: Random source for stegotoken sampling (encoder-only).
        threshold: Per-block posterior entropy stopping bound, in bits.
        min_tokens: Minimum total tokens to emit (padding is pure covertext).
        max_tokens: Safety bound on coupling-phase length.
        observer: Optional per-step callback.

    Returns:
        The full stegotoken list (coupling phase plus padding).

    Raises:
        NonterminationError: Coupling phase exceeded ``max_tokens``.
        PosteriorCollapseError: The true block value lost all posterior mass.
    """
    if max_tokens < min_tokens:
        raise CodecError("max_tokens must be at least min_tokens")
    state = CodecState(ciphertext.n_blocks, ciphertext.block_bits, threshold,
                       channel)
    blocks = ciphertext.blocks
    tokens: list[int] = []
    while True:
        i_star = state.select_block()
        if i_star is None:
            break
        if len(tokens) >= max_tokens:
            raise NonterminationError(
                f"nontermination: coupling phase exceeded {max_tokens} tokens "
                f"(threshold {threshold} too small for this channel?)"
            )
        t0 = time.perf_counter()
        channel_dist = channel.next_dist()
        t_channel = time.perf_counter() - t0

        t0 = time.perf_counter()
        mu, coupling = state.couple(i_star, channel_dist)
        before = state.entropies[i_star]
        row = mu.index_of(int(blocks[i_star]))
        if row < 0:
            raise PosteriorCollapseError(
                f"posterior-collapse: block {i_star} lost the true value"
            )
        token = sample(row_conditional(coupling, row), rng)
        posterior = state.absorb(i_star, coupling, token)
        if state.posteriors[i_star].prob_of(int(blocks[i_star])) <= 0.0:
            raise PosteriorCollapseError(
                f"posterior-collapse: block {i_star} lost the true value"
            )
        t_coupling = time.perf_counter() - t0

        t0 = time.perf_counter()
        channel.append(token)
        t_channel += time.perf_counter() - t0
        tokens.append(token)
        if observer is not None:
            observer(StepRecord(
                step=state.step - 1, block=i_star, channel_dist=channel_dist,
                coupling=coupling, token=token,
                posterior_before_entropy=float(before),
                posterior_after=posterior, channel_seconds=t_channel,
                coupling_seconds=t_coupling,
            ))
    while len(tokens) < min_tokens:
        token = sample(channel.next_dist(), rng)
        channel.append(token)
        tokens.append(token)
    return tokens


@dataclass
class DecodeResult:
    """Outcome of posterior-tracking decoding."""

    bits: np.ndarray
    block_values: np.ndarray
    residual_entropies: np.ndarray
    tokens_used: int
    block_bits: int

    @property
    def bit_length(self) -> int:
        return int(self.bits.size)


def decode(tokens, channel: Channel, *, block_bits: int, n_blocks: int,
           threshold: float = DEFAULT_THRESHOLD, bit_length: int | None = None,
           observer: StepObserver | None = None) -> DecodeResult:
    """Recover ciphertext bits from a stegotoken sequence.

    Replays the encoder's deterministic iteration (same block selection,
    same coupling) conditioned on the observed tokens, stops at the step
    where the encoder's coupling phase ended, and ignores any padding tokens
    after it.

    Args:
        tokens: Stegotoken sequence.
        channel: A channel built from the same spec as the encoder's.
        block_bits: Block size B shared with the encoder.
        n_blocks: Number of ciphertext blocks.
        threshold: Same stopping bound the encoder used.
        bit_length: Ciphertext length; defaults to n_blocks * block_bits.
        observer: Optional per-step callback.

    Raises:
        InsufficientTokensError: Tokens ran out before every posterior
            entropy fell below the threshold.
    """
    if bit_length is None:
        bit_length = n_blocks * block_bits
    if not 0 < bit_length <= n_blocks * block_bits:
        raise CodecError(
            f"bit_length {bit_length} inconsistent with {n_blocks} blocks "
            f"of {block_bits} bits"
        )
    state = CodecState(n_blocks, block_bits, threshold, channel)
    used = 0
    token_list = [int(t) for t in tokens]
    while True:
        i_star = state.select_block()
        if i_star is None:
            break
        if used >= len(token_list):
            raise InsufficientTokensError(
                f"insufficient-tokens: stegotext ended after {used} tokens "
                f"with max posterior entropy {state.max_entropy():.4f} bits"
            )
        t0 = time.perf_counter()
        channel_dist = channel.next_dist()
        t_channel = time.perf_counter() - t0

        t0 = time.perf_counter()
        _, coupling = state.couple(i_star, channel_dist)
        before = state.entropies[i_star]
        token = token_list[used]
        posterior = state.absorb(i_star, coupling, token)
        t_coupling = time.perf_counter() - t0

        t0 = time.perf_counter()
        channel.append(token)
        t_channel += time.perf_counter() - t0
        used += 1
        if observer is not None:
            observer(StepRecord(
                step=state.step - 1, block=i_star, channel_dist=channel_dist,
                coupling=coupling, token=token,
                posterior_before_entropy=float(before),
                posterior_after=posterior, channel_seconds=t_channel,
                coupling_seconds=t_coupling,
            ))
    block_values = np.array([p.map_value() for p in state.posteriors],
                            dtype=np.int64)
    return DecodeResult(
        bits=unpack_blocks(block_values, block_bits, bit_length),
        block_values=block_values,
        residual_entropies=state.entropies.copy(),
        tokens_used=used,
        block_bits=block_bits,
    )


def stego_marginal(posterior: Categorical, coupling: SparseCoupling) -> Categorical:
    """Induced stegotoken distribution sum_x mu(x) * gamma(token | x).

    For a coupling built from ``posterior`` this equals the coupling's right
    marginal up to numerical dust; computing it from the entries keeps the
    security audit honest when handed a corrupted coupling.
    """
    left = coupling.left_marginal
    weights = np.zeros(len(left))
    pos = np.searchsorted(left.ids, posterior.ids)
    inside = pos < len(left)
    match = inside.copy()
    match[inside] &= left.ids[pos[inside]] == posterior.ids[inside]
    row_mass = coupling.row_sums()
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(row_mass > 0.0, 1.0 / row_mass, 0.0)
    weights[pos[match]] = posterior.probs[match] * ratio[pos[match]]
    masses = coupling.mass * weights[coupling.rows]
    col_mass = np.bincount(coupling.cols, weights=masses,
                           minlength=len(coupling.right_marginal))
    keep = col_mass > 0.0
    if not keep.any():
        raise CodecError("posterior places no mass on the coupling rows")
    return Categorical(coupling.right_marginal.ids[keep], col_mass[keep])


@dataclass
class StegotextFile:
    """On-disk stegotext: public channel/codec configuration plus tokens.

    Only the key is secret; the channel spec and hyperparameters travel in
    the clear.
    """

    channel: ChannelSpec
    block_bits: int
    threshold: float
    n_blocks: int
    tokens: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "channel": self.channel.to_json(),
            "block_bits": self.block_bits,
            "threshold": self.threshold,
            "n_blocks": self.n_blocks,
            "tokens": [int(t) for t in self.tokens],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def from_json(cls, obj: dict) -> "StegotextFile":
        return cls(
            channel=ChannelSpec.from_json(obj["channel"]),
            block_bits=int(obj["block_bits"]),
            threshold=float(obj["threshold"]),
            n_blocks=int(obj["n_blocks"]),
            tokens=[int(t) for t in obj["tokens"]],
        )

    @classmethod
    def load(cls, path) -> "StegotextFile":
        return cls.from_json(json.loads(Path(path).read_text()))
