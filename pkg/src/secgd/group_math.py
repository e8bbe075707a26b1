"""Exact arithmetic on d-dimensional vectors over Z_{2^m}.

Every value the protocol moves around -- quantized gradients, masks,
masked gradients, the server's running sum -- is a ``GroupVector``:
a fixed-length tuple of integers reduced modulo ``2**m``.  Vectors are
immutable and hashable, so they can be shared freely between tasks and
used as dictionary keys (the subset-sum solver relies on this).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

MAX_BITS = 64


class FormatError(ValueError):
    """Raised when a byte string does not decode to a valid vector."""


@dataclass(frozen=True)
class GroupVector:
    """A vector in Z_{2^m}^d.

    ``entries`` holds the integer coordinates, each in ``[0, 2**m)``.
    Two vectors are operable only if both ``d`` and ``m`` match.
    """

    entries: tuple[int, ...]
    m: int

    def __post_init__(self):
        if not 1 <= self.m <= MAX_BITS:
            raise ValueError(f"m must be in [1, {MAX_BITS}], got {self.m}")
        if len(self.entries) < 1:
            raise ValueError("dimension must be >= 1")
        if not isinstance(self.entries, tuple):
            object.__setattr__(self, "entries", tuple(self.entries))
        bound = 1 << self.m
        for e in self.entries:
            if not 0 <= e < bound:
                raise ValueError(f"entry {e} out of range [0, 2^{self.m})")

    @property
    def d(self) -> int:
        return len(self.entries)

    @classmethod
    def zeros(cls, d: int, m: int) -> "GroupVector":
        return cls((0,) * d, m)

    def __add__(self, other: "GroupVector") -> "GroupVector":
        return add(self, other)

    def __sub__(self, other: "GroupVector") -> "GroupVector":
        return sub(self, other)


def _check_compatible(a: GroupVector, b: GroupVector) -> None:
    if a.m != b.m or a.d != b.d:
        raise ValueError(
            f"incompatible vectors: (d={a.d}, m={a.m}) vs (d={b.d}, m={b.m})"
        )


def add(a: GroupVector, b: GroupVector) -> GroupVector:
    """Entry-wise sum modulo 2^m."""
    _check_compatible(a, b)
    mask = (1 << a.m) - 1
    return GroupVector(
        tuple((x + y) & mask for x, y in zip(a.entries, b.entries)), a.m
    )


def sub(a: GroupVector, b: GroupVector) -> GroupVector:
    """Entry-wise difference modulo 2^m; inverse of :func:`add`."""
    _check_compatible(a, b)
    mask = (1 << a.m) - 1
    return GroupVector(
        tuple((x - y) & mask for x, y in zip(a.entries, b.entries)), a.m
    )


def gsum(vectors: Iterable[GroupVector], d: int, m: int) -> GroupVector:
    """Sum a (possibly empty) collection of vectors in Z_{2^m}^d.

    Order never matters: modular addition is commutative and associative.
    """
    mask = (1 << m) - 1
    acc = [0] * d
    for v in vectors:
        if v.m != m or v.d != d:
            raise ValueError(
                f"incompatible vector in sum: (d={v.d}, m={v.m}) vs (d={d}, m={m})"
            )
        for i, e in enumerate(v.entries):
            acc[i] += e
    return GroupVector(tuple(x & mask for x in acc), m)


def entry_bytes(m: int) -> int:
    """Bytes used to encode one entry: ceil(m / 8)."""
    return (m + 7) // 8


def serialize(v: GroupVector) -> bytes:
    """Encode each entry as ceil(m/8) big-endian bytes, concatenated."""
    width = entry_bytes(v.m)
    return b"".join(e.to_bytes(width, "big") for e in v.entries)


def deserialize(data: bytes, d: int, m: int) -> GroupVector:
    """Inverse of :func:`serialize`; validates length and entry range."""
    width = entry_bytes(m)
    if len(data) != d * width:
        raise FormatError(
            f"expected {d * width} bytes for (d={d}, m={m}), got {len(data)}"
        )
    bound = 1 << m
    entries = []
    for i in range(d):
        e = int.from_bytes(data[i * width : (i + 1) * width], "big")
        if e >= bound:
            raise FormatError(f"entry {e} at index {i} is >= 2^{m}")
        entries.append(e)
    return GroupVector(tuple(entries), m)


def from_sequence(values: Sequence[int], m: int) -> GroupVector:
    """Build a vector from plain integers, reducing each modulo 2^m."""
    mask = (1 << m) - 1
    return GroupVector(tuple(int(v) & mask for v in values), m)
