"""Fixed-point quantization between real gradient vectors and Z_{2^m}^d.

A client gradient is mapped to non-negative integers in three steps:
clip to the L-infinity ball of radius ``C``, shift by ``+C`` so all
entries are non-negative, then round stochastically to the integer grid
with ``f`` fraction bits.  The shift makes every entry land in
``[0, 2^m_tilde - 1]``; using ``m = m_tilde + ceil(log2 N)`` bits for
the group guarantees the sum of N such vectors never wraps, so the
server can undo the shift on the aggregate by subtracting ``N * C``.

Stochastic rounding is unbiased: a value ``x`` with integer part ``i``
becomes ``i + 1`` with probability ``x - i`` and ``i`` otherwise, so the
expected output equals ``x`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .group_math import MAX_BITS, GroupVector

# Absolute slack for float round-off when checking the clip precondition.
_CLIP_TOL = 1e-9


@dataclass(frozen=True)
class QuantizationParams:
    """Bit-allocation parameters shared by all clients and the server.

    m_tilde: bits per entry of a single client vector.
    f: fraction bits (position of the binary point), 0 <= f < m_tilde.
    n_clients: number of clients N whose vectors will be summed.
    m: group bits, m_tilde + ceil(log2 N); derived, do not pass.
    """

    m_tilde: int
    f: int
    n_clients: int
    m: int = field(init=False)

    def __post_init__(self):
        if self.m_tilde < 1:
            raise ValueError(f"m_tilde must be >= 1, got {self.m_tilde}")
        if not 0 <= self.f < self.m_tilde:
            raise ValueError(f"f must satisfy 0 <= f < m_tilde, got f={self.f}")
        if self.n_clients < 2:
            raise ValueError(f"need at least 2 clients, got {self.n_clients}")
        object.__setattr__(
            self, "m", self.m_tilde + math.ceil(math.log2(self.n_clients))
        )
        if self.m > MAX_BITS:
            raise ValueError(
                f"m = m_tilde + ceil(log2 N) = {self.m} exceeds {MAX_BITS} bits"
            )
        if self.clip_radius <= 0:
            raise ValueError("clip radius must be positive")

    @property
    def clip_radius(self) -> float:
        """C = (2^(m_tilde-1) - 1/2) / 2^f, the largest representable magnitude."""
        return ((1 << (self.m_tilde - 1)) - 0.5) / (1 << self.f)

    @property
    def grid_max(self) -> int:
        """Largest integer a single quantized entry can take: 2^m_tilde - 1."""
        return (1 << self.m_tilde) - 1


def as_real_vector(g) -> np.ndarray:
    """Validate and return a finite float64 vector."""
    arr = np.asarray(g, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"expected a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


def clip_linf(g, params: QuantizationParams) -> np.ndarray:
    """Project onto the L-infinity ball of radius ``params.clip_radius``.

    Scaling by C / ||g||_inf preserves the ratios (and signs) of the
    entries.  Idempotent; the output is clamped so no entry exceeds C
    even by float round-off.
    """
    arr = as_real_vector(g)
    c = params.clip_radius
    norm = float(np.max(np.abs(arr))) if arr.size else 0.0
    if norm > c:
        arr = arr * (c / norm)
    return np.clip(arr, -c, c)


def quantize(g, params: QuantizationParams, rng: np.random.Generator) -> GroupVector:
    """Shift by +C, scale by 2^f, and round stochastically to integers.

    Requires ``||g||_inf <= C`` (clip first).  Output entries lie in
    ``[0, 2^m_tilde - 1]`` and the expectation of each equals the shifted
    scaled input exactly.
    """
    arr = as_real_vector(g)
    c = params.clip_radius
    if np.any(np.abs(arr) > c + _CLIP_TOL):
        worst = float(np.max(np.abs(arr)))
        raise ValueError(f"entry magnitude {worst} exceeds clip radius {c}; clip first")
    x = (arr + c) * (1 << params.f)
    # Float dust from the shift can leave x a hair outside the grid.
    x = np.clip(x, 0.0, float(params.grid_max))
    lower = np.floor(x)
    frac = x - lower
    up = rng.random(arr.size) < frac
    entries = lower.astype(np.int64) + up.astype(np.int64)
    return GroupVector(tuple(int(e) for e in entries), params.m)


def dequantize_sum(total: GroupVector, params: QuantizationParams) -> np.ndarray:
    """Recover the real-valued sum of N quantized vectors.

    ``total`` must be the exact integer sum (no modular wrap, which the
    choice of m guarantees for N honest clients).  Each entry is scaled
    back by 2^-f and the N accumulated shifts are subtracted.
    """
    scale = float(1 << params.f)
    shift = params.n_clients * params.clip_radius
    return np.array([e / scale - shift for e in total.entries], dtype=np.float64)
