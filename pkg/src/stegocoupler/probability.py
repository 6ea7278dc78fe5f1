"""Categorical distributions over token ids, bit-denominated information
measures, and a deterministic counter-based random source.

All entropies and divergences are in bits (log base 2) throughout the
package.
"""

from __future__ import annotations

import numpy as np

from .errors import KlUndefinedError

# Normalized probabilities below this are pruned at construction; keeps
# log(0) out of entropy terms and bounds coupling sizes.
PRUNE_EPS = 1e-12

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_DERIVE_SALT = np.uint64(0xA0761D6478BD642F)


class Categorical:
    """Finite probability distribution over non-negative integer token ids.

    Construction normalizes the weights, prunes entries whose normalized
    probability falls below ``PRUNE_EPS``, renormalizes the remainder, and
    sorts the support ascending by id. The resulting arrays are read-only;
    instances are immutable and safe to share across threads.

    Args:
        ids: 1D array-like of distinct non-negative integer token ids.
        probs: 1D array-like of non-negative weights, at least one positive.

    Raises:
        ValueError: On shape mismatch, duplicate or negative ids, negative
            weights, or non-finite / all-zero total mass.
    """

    __slots__ = ("ids", "probs")

    def __init__(self, ids, probs):
        ids = np.asarray(ids, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)
        if ids.ndim != 1 or probs.ndim != 1 or ids.shape != probs.shape:
            raise ValueError("ids and probs must be 1D arrays of equal length")
        if ids.size == 0:
            raise ValueError("empty support")
        if np.any(ids < 0):
            raise ValueError("token ids must be non-negative")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0.0):
            raise ValueError("probabilities must be finite and non-negative")
        order = np.argsort(ids)
        ids = ids[order]
        probs = probs[order]
        if np.any(np.diff(ids) == 0):
            raise ValueError("duplicate token ids")
        total = float(probs.sum())
        if not np.isfinite(total) or total <= 0.0:
            raise ValueError("total probability mass must be positive")
        probs = probs / total
        keep = probs >= PRUNE_EPS
        if not keep.all():
            ids = ids[keep]
            probs = probs[keep]
            if ids.size == 0:
                raise ValueError("all probabilities below pruning threshold")
            probs = probs / probs.sum()
        ids.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "probs", probs)

    def __setattr__(self, name, value):
        raise AttributeError("Categorical is immutable")

    def __len__(self) -> int:
        return int(self.ids.size)

    def __repr__(self) -> str:
        return f"Categorical(support={len(self)})"

    def index_of(self, token_id: int) -> int:
        """Position of ``token_id`` in the support, or -1 if absent."""
        pos = int(np.searchsorted(self.ids, token_id))
        if pos < len(self) and int(self.ids[pos]) == int(token_id):
            return pos
        return -1

    @classmethod
    def uniform(cls, ids) -> "Categorical":
        """Uniform distribution; ``ids`` is an iterable of ids or a count."""
        if isinstance(ids, (int, np.integer)):
            ids = np.arange(int(ids), dtype=np.int64)
        else:
            ids = np.asarray(ids, dtype=np.int64)
        return cls(ids, np.ones(ids.size, dtype=np.float64))

    @classmethod
    def point_mass(cls, token_id: int) -> "Categorical":
        return cls(np.array([token_id], dtype=np.int64), np.array([1.0]))

    def to_json(self) -> dict:
        return {"ids": self.ids.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Categorical":
        return cls(obj["ids"], obj["probs"])


def entropy(d: Categorical) -> float:
    """Shannon entropy of ``d`` in bits: -sum p*log2(p)."""
    return float(-np.sum(d.probs * np.log2(d.probs)))


def kl(p: Categorical, q: Categorical) -> float:
    """KL divergence KL(p || q) in bits.

    Requires support(p) to be contained in support(q).

    Raises:
        KlUndefinedError: If some token of p has zero mass under q.
    """
    pos = np.searchsorted(q.ids, p.ids)
    inside = pos < len(q)
    if not inside.all() or np.any(q.ids[pos[inside]] != p.ids[inside]):
        raise KlUndefinedError(
            "kl-undefined: support of p is not contained in support of q"
        )
    return float(np.sum(p.probs * np.log2(p.probs / q.probs[pos])))


def sample(d: Categorical, rng: "Rng") -> int:
    """Draw one token id from ``d`` by inverse-CDF over the sorted support."""
    u = rng.next_double()
    cdf = np.cumsum(d.probs)
    k = int(np.searchsorted(cdf, u, side="right"))
    if k >= len(d):
        k = len(d) - 1
    return int(d.ids[k])


def _mix64(z: np.uint64) -> np.uint64:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic counter-based random source (SplitMix64).

    Output word ``k`` (0-based) is ``mix64(seed + (k+1) * 0x9E3779B97F4A7C15)``
    mod 2**64, where ``mix64`` is the xorshift-multiply finalizer with
    constants 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB and shifts 30/27/31.
    Doubles in [0, 1) take the top 53 bits: ``(word >> 11) * 2**-53``; single
    bits take the top bit. Because the stream is a pure function of
    (seed, counter) over fixed-width integer arithmetic, identical seeds
    reproduce identical streams across machines and processes.

    Not cryptographically secure; see README for the threat-model caveat on
    key generation.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_words(self, count: int) -> np.ndarray:
        """Next ``count`` raw 64-bit words as a uint64 array."""
        if count < 0:
            raise ValueError("count must be non-negative")
        idx = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + idx * _GOLDEN)

    def next_word(self) -> int:
        return int(self.next_words(1)[0])

    def next_double(self) -> float:
        """One double in [0, 1) with 53 uniform bits."""
        return float(int(self.next_word()) >> 11) * 2.0**-53

    def next_bits(self, count: int) -> np.ndarray:
        """``count`` uniform bits (uint8 0/1), one word consumed per bit."""
        return (self.next_words(count) >> np.uint64(63)).astype(np.uint8)

    def derive(self, stream: int) -> "Rng":
        """Independent child generator for substream ``stream``.

        The child seed is ``mix64(seed XOR mix64((stream + 1) * SALT))`` with
        SALT = 0xA0761D6478BD642F; derivation does not consume from or depend
        on this generator's counter.
        """
        with np.errstate(over="ignore"):
            salt = _mix64(np.uint64((int(stream) + 1) & _MASK64) * _DERIVE_SALT)
            child = _mix64(np.uint64(self.seed) ^ salt)
        return Rng(int(child))
