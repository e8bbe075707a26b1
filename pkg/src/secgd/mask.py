"""Noise seeds and their deterministic expansion to uniform group vectors.

Instead of sending K full d-dimensional masks, a client sends K short
seeds; both sides expand each seed through the same keyed stream
generator, so the server can regenerate the masks exactly without ever
learning which client sent which seed.

The generator is pinned by a version byte carried in the round
configuration: version 0x01 is ChaCha20, keyed with the seed value
big-endian right-aligned in a 32-byte key (zero padding) and a fixed
all-zero 16-byte nonce.  No round or client index enters the expansion;
it must not, or the server could not regenerate a mask without linkage
metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from .group_math import GroupVector

MAX_SEED_BITS = 256

# Stream-generator registry, keyed by the version byte in the handshake.
PRG_VERSION_CHACHA20 = 0x01
SUPPORTED_PRG_VERSIONS = (PRG_VERSION_CHACHA20,)

_CHACHA_NONCE = bytes(16)


@dataclass(frozen=True)
class Seed:
    """A q-bit opaque value, wire-encoded as ceil(q/8) big-endian bytes."""

    value: int
    q: int

    def __post_init__(self):
        if not 1 <= self.q <= MAX_SEED_BITS:
            raise ValueError(f"q must be in [1, {MAX_SEED_BITS}], got {self.q}")
        if not 0 <= self.value < (1 << self.q):
            raise ValueError(f"seed value out of range for q={self.q}")

    def to_bytes(self) -> bytes:
        return self.value.to_bytes((self.q + 7) // 8, "big")

    @classmethod
    def from_bytes(cls, data: bytes, q: int) -> "Seed":
        if len(data) != (q + 7) // 8:
            raise ValueError(f"expected {(q + 7) // 8} seed bytes, got {len(data)}")
        value = int.from_bytes(data, "big")
        return cls(value, q)


@dataclass(frozen=True)
class MaskSet:
    """K seeds together with their expansions for one client round."""

    seeds: tuple[Seed, ...]
    vectors: tuple[GroupVector, ...]

    @property
    def k(self) -> int:
        return len(self.seeds)


def seed_bits(k: int, p: float) -> int:
    """Seed length needed to keep any-two-seed collisions below p.

    With 2K seeds in play (two honest clients), the union bound over all
    pairs gives collision probability at most 2K(2K-1)/2 * 2^-q, so
    q = ceil(log2(2K(2K-1) / 2p)) suffices.  Clamped to [1, 256]; past
    256 bits the collision probability is negligible for any realistic K.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"target probability must be in (0, 1), got {p}")
    pairs = 2 * k * (2 * k - 1)
    # log2(pairs / 2p) split so huge K cannot overflow a float.
    q = math.ceil(math.log2(pairs) - math.log2(2.0 * p))
    return max(1, min(MAX_SEED_BITS, q))


def sample_seeds(k: int, q: int, rng: np.random.Generator) -> tuple[Seed, ...]:
    """Draw K seeds independently and uniformly from {0,1}^q."""
    if k < 0:
        raise ValueError(f"K must be >= 0, got {k}")
    nbytes = (q + 7) // 8
    mask = (1 << q) - 1
    out = []
    for _ in range(k):
        raw = rng.bytes(nbytes)
        out.append(Seed(int.from_bytes(raw, "big") & mask, q))
    return tuple(out)


def _keystream(seed: Seed, nbytes: int) -> bytes:
    key = seed.value.to_bytes(32, "big")
    enc = Cipher(algorithms.ChaCha20(key, _CHACHA_NONCE), mode=None).encryptor()
    return enc.update(bytes(nbytes))


def expand(
    seed: Seed, d: int, m: int, prg_version: int = PRG_VERSION_CHACHA20
) -> GroupVector:
    """Deterministically expand a seed to a vector in Z_{2^m}^d.

    Consumes exactly d*m bits of keystream; entry j is bits
    [j*m, (j+1)*m) read big-endian.  Identical (seed, d, m) always
    yields an identical vector on the client and the server.
    """
    if prg_version != PRG_VERSION_CHACHA20:
        raise ValueError(f"unsupported stream-generator version {prg_version:#x}")
    nbits = d * m
    stream = _keystream(seed, (nbits + 7) // 8)
    total = int.from_bytes(stream, "big") >> (8 * len(stream) - nbits)
    entry_mask = (1 << m) - 1
    entries = tuple((total >> (m * (d - 1 - j))) & entry_mask for j in range(d))
    return GroupVector(entries, m)


def make_mask_set(
    k: int, q: int, d: int, m: int, rng: np.random.Generator
) -> MaskSet:
    """Sample K seeds and expand each; one call per client per round."""
    seeds = sample_seeds(k, q, rng)
    vectors = tuple(expand(s, d, m) for s in seeds)
    return MaskSet(seeds, vectors)
