"""One-time-pad layer: key generation, XOR encryption, and packing of
bitstrings into fixed-width blocks.

Bitstrings are numpy uint8 arrays of 0/1. Bytes map to bits MSB-first; a
final partial block is zero-padded on the right and the pad is discarded on
unpacking using the configured bit length. The bit length is shared between
sender and receiver out of band (no in-band header).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CipherError, LengthMismatchError
from .probability import Rng

MAX_BLOCK_BITS = 20
DEFAULT_BLOCK_BITS = 10


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.ndim != 1:
        raise CipherError("bitstring must be one-dimensional")
    if arr.size and int(arr.max()) > 1:
        raise CipherError("bitstring values must be 0 or 1")
    return arr


def bits_from_bytes(data: bytes) -> np.ndarray:
    """Bytes to bits, MSB-first within each byte."""
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bytes_from_bits(bits) -> bytes:
    """Bits back to bytes; length must be a multiple of 8."""
    arr = _as_bits(bits)
    if arr.size % 8 != 0:
        raise CipherError("bit length must be a multiple of 8 to form bytes")
    return np.packbits(arr).tobytes()


@dataclass(frozen=True)
class Key:
    """One-time-pad key of exactly the configured ciphertext bit length."""

    bits: np.ndarray

    def __post_init__(self):
        arr = _as_bits(self.bits)
        if arr.size == 0:
            raise CipherError("empty key")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    def __len__(self) -> int:
        return int(self.bits.size)

    def to_hex(self) -> str:
        """Lowercase hex; bits padded on the right to a nibble boundary."""
        pad = (-len(self)) % 4
        padded = np.concatenate([self.bits, np.zeros(pad, dtype=np.uint8)])
        nibbles = padded.reshape(-1, 4) @ np.array([8, 4, 2, 1], dtype=np.uint8)
        return "".join("0123456789abcdef"[int(v)] for v in nibbles)

    @classmethod
    def from_hex(cls, text: str, bit_length: int | None = None) -> "Key":
        text = text.strip().lower()
        if not text or any(c not in "0123456789abcdef" for c in text):
            raise CipherError("key file must contain lowercase hex on one line")
        values = np.array([int(c, 16) for c in text], dtype=np.uint8)
        bits = ((values[:, None] >> np.array([3, 2, 1, 0])) & 1).astype(np.uint8)
        bits = bits.reshape(-1)
        if bit_length is None:
            bit_length = bits.size
        if bit_length > bits.size or bits.size - bit_length >= 4:
            raise LengthMismatchError(
                f"length-mismatch: key file holds {bits.size} bits, need {bit_length}"
            )
        return cls(bits[:bit_length])

    def save(self, path) -> None:
        Path(path).write_text(self.to_hex() + "\n")

    @classmethod
    def load(cls, path, bit_length: int | None = None) -> "Key":
        return cls.from_hex(Path(path).read_text(), bit_length)


@dataclass(frozen=True)
class Ciphertext:
    """Uniform ciphertext bits together with their block packing."""

    bits: np.ndarray
    block_bits: int
    blocks: np.ndarray

    def __post_init__(self):
        if not 1 <= self.block_bits <= MAX_BLOCK_BITS:
            raise CipherError(f"block_bits must be in [1, {MAX_BLOCK_BITS}]")
        bits = _as_bits(self.bits)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        blocks = np.asarray(self.blocks, dtype=np.int64)
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_bits(cls, bits, block_bits: int) -> "Ciphertext":
        bits = _as_bits(bits)
        return cls(bits, block_bits, pack_blocks(bits, block_bits))

    @property
    def bit_length(self) -> int:
        return int(self.bits.size)

    @property
    def n_blocks(self) -> int:
        return int(self.blocks.size)


def gen_key(bit_length: int, rng: Rng) -> Key:
    """Uniform random key of ``bit_length`` bits."""
    if bit_length <= 0:
        raise CipherError("key length must be positive")
    return Key(rng.next_bits(bit_length))


def encrypt(message_bits, key: Key,
            block_bits: int = DEFAULT_BLOCK_BITS) -> Ciphertext:
    """XOR the message with the key; with a uniform key the result is
    uniform regardless of the message distribution."""
    msg = _as_bits(message_bits)
    if msg.size != len(key):
        raise LengthMismatchError(
            f"length-mismatch: message {msg.size} bits vs key {len(key)} bits"
        )
    return Ciphertext.from_bits(msg ^ key.bits, block_bits)


def decrypt(ciphertext, key: Key) -> np.ndarray:
    """Invert `encrypt`; accepts a Ciphertext or a raw bit array."""
    bits = ciphertext.bits if isinstance(ciphertext, Ciphertext) else _as_bits(ciphertext)
    if bits.size != len(key):
        raise LengthMismatchError(
            f"length-mismatch: ciphertext {bits.size} bits vs key {len(key)} bits"
        )
    return (bits ^ key.bits).astype(np.uint8)


def pack_blocks(bits, block_bits: int) -> np.ndarray:
    """Pack bits into integers, MSB-first within each block; the final
    partial block is zero-padded on the right."""
    if not 1 <= block_bits <= MAX_BLOCK_BITS:
        raise CipherError(f"block_bits must be in [1, {MAX_BLOCK_BITS}]")
    arr = _as_bits(bits)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    pad = (-arr.size) % block_bits
    padded = np.concatenate([arr, np.zeros(pad, dtype=np.uint8)])
    weights = (1 << np.arange(block_bits - 1, -1, -1)).astype(np.int64)
    return padded.reshape(-1, block_bits).astype(np.int64) @ weights


def unpack_blocks(blocks, block_bits: int, bit_length: int) -> np.ndarray:
    """Inverse of `pack_blocks` given the original bit length."""
    if not 1 <= block_bits <= MAX_BLOCK_BITS:
        raise CipherError(f"block_bits must be in [1, {MAX_BLOCK_BITS}]")
    arr = np.asarray(blocks, dtype=np.int64)
    if bit_length > arr.size * block_bits:
        raise LengthMismatchError(
            f"length-mismatch: {arr.size} blocks of {block_bits} bits "
            f"cannot hold {bit_length} bits"
        )
    shifts = np.arange(block_bits - 1, -1, -1)
    bits = ((arr[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)
    return bits[:bit_length]
