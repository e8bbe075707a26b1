"""The attack surface, at desk scale.

Detecting whether a hypothesized gradient h hides behind a masked
message a reduces to multidimensional subset sum: the remaining seed
expansions form a multiset B of (near-)uniform vectors in Z_{2^m}^d,
and h is consistent with a exactly when some cardinality-K submultiset
of B sums to h - a.  This module implements exact solvers for small
instances, Monte-Carlo experiments that probe the two hardness regimes
(near-injective when 2K < dm, near-uniform sums when 2K > dm), and the
classic two-client demonstration that the *aggregate* gradient alone
can leak features, motivating the DP extension.

Solvers refuse instances beyond their feasibility guards rather than
silently approximating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import ReconstructionFailed, SolverSizeError
from .group_math import GroupVector, deserialize, from_sequence, gsum, sub
from .mask import PRG_VERSION_CHACHA20, Seed, expand
from .mixnet import AdversaryView

EXHAUSTIVE_MAX_N = 24
MITM_MAX_N = 40


@dataclass(frozen=True)
class DsssInstance:
    """Decide: does some submultiset of ``vectors`` sum to ``target``?

    All vectors share (d, m); sums are coordinate-wise modulo 2^m.
    ``cardinality`` restricts admissible submultisets to that size
    (None = unconstrained).
    """

    vectors: tuple[GroupVector, ...]
    target: GroupVector
    cardinality: int | None = None

    def __post_init__(self):
        d, m = self.target.d, self.target.m
        for v in self.vectors:
            if v.d != d or v.m != m:
                raise ValueError("all vectors must share (d, m) with the target")
        if self.cardinality is not None and self.cardinality < 0:
            raise ValueError(f"cardinality must be >= 0, got {self.cardinality}")

    @property
    def n(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class DsssResult:
    found: bool
    witness: tuple[int, ...] | None  # indices into the vector multiset
    explored: int  # subsets enumerated; the solver-work metric
    method: str


def _pack(v: GroupVector) -> int:
    out = 0
    for e in v.entries:
        out = (out << v.m) | e
    return out


def exhaustive_decide(instance: DsssInstance) -> DsssResult:
    """Plain enumeration of all admissible submultisets.

    Kept deliberately simple: it is the reference oracle the
    meet-in-the-middle solver is checked against.
    """
    n = instance.n
    if n > EXHAUSTIVE_MAX_N:
        raise SolverSizeError(
            f"exhaustive search refuses n={n} > {EXHAUSTIVE_MAX_N}"
        )
    d, m = instance.target.d, instance.target.m
    target = instance.target.entries
    cards = (
        range(n + 1)
        if instance.cardinality is None
        else (instance.cardinality,)
    )
    explored = 0
    for c in cards:
        for idx in combinations(range(n), c):
            explored += 1
            s = gsum((instance.vectors[i] for i in idx), d, m)
            if s.entries == target:
                return DsssResult(True, idx, explored, "exhaustive")
    return DsssResult(False, None, explored, "exhaustive")


def _enumerate_half(
    vectors: Sequence[GroupVector], offset: int, d: int, m: int
) -> list[tuple[int, int, tuple[int, ...]]]:
    """All subsets of one half as (packed sum, cardinality, indices)."""
    mask = (1 << m) - 1
    items: list[tuple[tuple[int, ...], int, tuple[int, ...]]] = [
        ((0,) * d, 0, ())
    ]
    for j, v in enumerate(vectors):
        extended = [
            (
                tuple((a + b) & mask for a, b in zip(s, v.entries)),
                c + 1,
                idx + (offset + j,),
            )
            for s, c, idx in items
        ]
        items.extend(extended)
    packed = []
    for s, c, idx in items:
        key = 0
        for e in s:
            key = (key << m) | e
        packed.append((key, c, idx))
    return packed


def mitm_decide(instance: DsssInstance) -> DsssResult:
    """Meet-in-the-middle: join subset sums of two halves on the target.

    O(2^(n/2)) time and memory instead of O(2^n); the cardinality
    constraint is tracked per half and enforced at the join.
    """
    n = instance.n
    if n > MITM_MAX_N:
        raise SolverSizeError(
            f"meet-in-the-middle refuses n={n} > {MITM_MAX_N}"
        )
    d, m = instance.target.d, instance.target.m
    half = n // 2
    left = _enumerate_half(instance.vectors[:half], 0, d, m)
    right = _enumerate_half(instance.vectors[half:], half, d, m)
    explored = len(left) + len(right)

    # Index the left half: (packed sum, cardinality) -> first witness.
    by_key: dict[tuple[int, int], tuple[int, ...]] = {}
    for key, c, idx in left:
        by_key.setdefault((key, c), idx)

    mask = (1 << m) - 1
    target = instance.target.entries
    max_left_card = half
    for key_r, c_r, idx_r in right:
        # Needed left sum: target - right sum, entry-wise mod 2^m.
        need = 0
        for j in range(d):
            e_r = (key_r >> (m * (d - 1 - j))) & mask
            need = (need << m) | ((target[j] - e_r) & mask)
        if instance.cardinality is None:
            for c_l in range(max_left_card + 1):
                hit = by_key.get((need, c_l))
                if hit is not None:
                    return DsssResult(True, hit + idx_r, explored, "mitm")
        else:
            c_l = instance.cardinality - c_r
            if 0 <= c_l <= max_left_card:
                hit = by_key.get((need, c_l))
                if hit is not None:
                    return DsssResult(True, hit + idx_r, explored, "mitm")
    return DsssResult(False, None, explored, "mitm")


def dsss_decide(instance: DsssInstance, method: str = "auto") -> DsssResult:
    """Exact decision with witness; refuses instances past the guards."""
    if method == "exhaustive":
        return exhaustive_decide(instance)
    if method == "mitm":
        return mitm_decide(instance)
    if method == "auto":
        if instance.n <= MITM_MAX_N:
            return mitm_decide(instance)
        raise SolverSizeError(
            f"n={instance.n} exceeds the exact-solver guard {MITM_MAX_N}"
        )
    raise ValueError(f"unknown method {method!r}")


def gradient_recovery_attack(
    view: AdversaryView,
    h: GroupVector,
    k: int,
    seed_bits: int,
    prg_version: int = PRG_VERSION_CHACHA20,
    seed_indices: Sequence[int] | None = None,
    method: str = "auto",
) -> list[DsssResult]:
    """Could some client have held gradient h in this round?

    For each masked payload a in the view, decides whether a
    cardinality-K submultiset of the expanded seed multiset sums to
    h - a.  ``seed_indices`` restricts which observed seeds enter the
    multiset; by default all of them do, which can only add false
    positives (seeds of other clients are independent noise).
    """
    d, m = h.d, h.m
    seed_payloads = view.seed_multiset
    if seed_indices is not None:
        seed_payloads = tuple(view.seed_multiset[i] for i in seed_indices)
    basis = tuple(
        expand(Seed.from_bytes(p, seed_bits), d, m, prg_version)
        for p in seed_payloads
    )
    results = []
    for payload in view.masked_multiset:
        a = deserialize(payload, d, m)
        instance = DsssInstance(basis, sub(h, a), cardinality=k)
        results.append(dsss_decide(instance, method))
    return results


def random_vectors(
    count: int, d: int, m: int, rng: np.random.Generator
) -> tuple[GroupVector, ...]:
    if count == 0:
        return ()
    high = 1 << m
    draws = rng.integers(0, high, size=(count, d), dtype=np.uint64)
    return tuple(from_sequence(row.tolist(), m) for row in draws)


@dataclass(frozen=True)
class InjectivityResult:
    d: int
    m: int
    k: int
    trials: int
    collisions: int
    rate: float
    bound: float  # union bound 2^(2K - dm), capped at 1


def injectivity_experiment(
    d: int, m: int, k: int, trials: int, rng: np.random.Generator
) -> InjectivityResult:
    """How often does a random planted subset have a second preimage?

    Samples B (2K uniform vectors) and a uniform cardinality-K subset S,
    then brute-forces for any other cardinality-K subset with the same
    sum.  In the 2K <= dm regime the union bound over the at most 2^2K
    competing subsets puts the collision probability at 2^(2K-dm).
    """
    if k < 0:
        raise ValueError("K must be >= 0")
    if 2 * k > EXHAUSTIVE_MAX_N:
        raise SolverSizeError(
            f"2K={2 * k} exceeds the brute-force guard {EXHAUSTIVE_MAX_N}"
        )
    collisions = 0
    for _ in range(trials):
        basis = random_vectors(2 * k, d, m, rng)
        chosen = tuple(sorted(rng.permutation(2 * k)[:k].tolist()))
        planted = gsum((basis[i] for i in chosen), d, m)
        for idx in combinations(range(2 * k), k):
            if idx == chosen:
                continue
            if gsum((basis[i] for i in idx), d, m).entries == planted.entries:
                collisions += 1
                break
    bound = min(1.0, 2.0 ** (2 * k - d * m))
    rate = collisions / trials if trials else 0.0
    return InjectivityResult(d, m, k, trials, collisions, rate, bound)


QUASIRANDOM_MAX_DM = 16


def _add_permutation(b: GroupVector, d: int, m: int) -> np.ndarray:
    """perm[i] = packed(unpacked(i) + b); adding b permutes the cells."""
    cells = 1 << (d * m)
    idx = np.arange(cells, dtype=np.int64)
    entry_mask = (1 << m) - 1
    out = np.zeros(cells, dtype=np.int64)
    for j in range(d):
        shift = m * (d - 1 - j)
        coord = (idx >> shift) & entry_mask
        coord = (coord + b.entries[j]) & entry_mask
        out |= coord << shift
    return out


def subset_sum_distribution(
    basis: Sequence[GroupVector], k: int
) -> np.ndarray:
    """Exact distribution of cardinality-k subset sums over Z_{2^m}^d.

    Tabulated by dynamic programming over (cardinality, group element);
    returns probabilities indexed by the packed group element.
    """
    if not basis:
        raise ValueError("need at least one vector")
    d, m = basis[0].d, basis[0].m
    if d * m > QUASIRANDOM_MAX_DM:
        raise SolverSizeError(
            f"dm={d * m} too large to tabulate (guard {QUASIRANDOM_MAX_DM})"
        )
    if not 0 <= k <= len(basis):
        raise ValueError(f"k={k} out of range for {len(basis)} vectors")
    cells = 1 << (d * m)
    table = np.zeros((k + 1, cells), dtype=np.int64)
    table[0, 0] = 1
    for b in basis:
        perm = _add_permutation(b, d, m)
        for c in range(min(k, len(basis)), 0, -1):
            shifted = np.zeros(cells, dtype=np.int64)
            shifted[perm] = table[c - 1]
            table[c] += shifted
    total = math.comb(len(basis), k)
    assert int(table[k].sum()) == total
    return table[k] / total


def tv_from_uniform(probs: np.ndarray) -> float:
    """Total-variation distance of a distribution from uniform."""
    uniform = 1.0 / probs.size
    return 0.5 * float(np.abs(probs - uniform).sum())


@dataclass(frozen=True)
class QuasirandomnessResult:
    d: int
    m: int
    k: int
    draws: int
    tv_distances: tuple[float, ...]
    median_tv: float


def quasirandomness_experiment(
    d: int, m: int, k: int, draws: int, rng: np.random.Generator
) -> QuasirandomnessResult:
    """Distribution of the TV distance between subset-sum law and uniform.

    For each draw of B (2K uniform vectors) the full law of the
    cardinality-K subset sum is tabulated exactly; in the 2K >= dm
    regime these sums flatten towards uniform as 2K grows.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    tvs = []
    for _ in range(draws):
        basis = random_vectors(2 * k, d, m, rng)
        tvs.append(tv_from_uniform(subset_sum_distribution(basis, k)))
    return QuasirandomnessResult(
        d, m, k, draws, tuple(tvs), float(np.median(tvs))
    )


def leakage_forward(x1: float, x2: float) -> tuple[float, float]:
    """Aggregate gradients the server sees in the two probing rounds.

    Two clients hold one positive scalar feature each; the loss
    L(w, x) = exp(w x)/x - w has dL/dw = exp(w x) - 1.  At w = -1 the
    exact aggregate is exp(-x1) + exp(-x2) - 2 and at w = +1 it is
    exp(x1) + exp(x2) - 2.
    """
    return (
        math.exp(-x1) + math.exp(-x2) - 2.0,
        math.exp(x1) + math.exp(x2) - 2.0,
    )


def recover_features(
    g_at_minus_one: float, g_at_plus_one: float
) -> tuple[float, float]:
    """Invert :func:`leakage_forward`: features from two exact aggregates.

    Substituting u = exp(x1), v = exp(x2) turns the two observations
    into u + v and 1/u + 1/v, so u and v are the roots of
    z^2 - P z + P/Q with P = u + v and Q = 1/u + 1/v.  Exact aggregate
    gradients therefore reveal both features -- the motivating case for
    adding DP noise to the sum.  Returns (x1, x2) in ascending order.
    """
    p = g_at_plus_one + 2.0
    q = g_at_minus_one + 2.0
    if p <= 0.0 or q <= 0.0:
        raise ReconstructionFailed(
            "aggregates are inconsistent with positive features"
        )
    prod = p / q
    disc = p * p - 4.0 * prod
    if disc < 0.0:
        raise ReconstructionFailed("no real solution for the feature pair")
    root = math.sqrt(disc)
    u = (p - root) / 2.0
    v = (p + root) / 2.0
    if u <= 0.0 or v <= 0.0:
        raise ReconstructionFailed("solution has non-positive exponentials")
    return (math.log(u), math.log(v))
