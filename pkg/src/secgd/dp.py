"""Differential privacy for the aggregated gradient.

The protocol already hides individual contributions, so Gaussian noise
only has to protect the *sum*: with N_tilde honest clients, each one
adds per-entry variance sigma^2 / N_tilde and the honest contributions
alone reach the full sigma^2 the mechanism needs.  Colluding clients
may add whatever they like; the guarantee rests on the honest ones.

Note on the calibration: ``gaussian_sigma`` treats the classical
Gaussian-mechanism threshold (Delta2/eps) * sqrt(2 ln(1.25/delta)) as a
lower bound on sigma^2 (not sigma).  That is deliberate and documented
rather than silently corrected; see the README.  The returned sigma is
the threshold times (1 + 1e-9), i.e. the smallest value strictly above
it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quantizer import as_real_vector

_STRICT_MARGIN = 1e-9


@dataclass(frozen=True)
class DpParams:
    """Privacy target and the client split it is calibrated for."""

    epsilon: float
    delta: float
    l2_sensitivity: float
    n_clients: int
    n_honest: int

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.l2_sensitivity <= 0:
            raise ValueError("l2 sensitivity must be > 0")
        if not 2 <= self.n_honest <= self.n_clients:
            raise ValueError(
                f"need 2 <= n_honest <= n_clients, got "
                f"{self.n_honest} of {self.n_clients}"
            )


def gaussian_sigma(params: DpParams) -> float:
    """Per-entry noise scale for the aggregate.

    Returns the smallest sigma with sigma^2 strictly above
    (Delta2 / eps) * sqrt(2 ln(1.25 / delta)).
    """
    bound = (params.l2_sensitivity / params.epsilon) * math.sqrt(
        2.0 * math.log(1.25 / params.delta)
    )
    return math.sqrt(bound * (1.0 + _STRICT_MARGIN))


def clip_l2(g, c2: float) -> np.ndarray:
    """Scale ``g`` down to L2 norm ``c2`` if it is longer; idempotent."""
    if c2 <= 0:
        raise ValueError(f"clip bound must be > 0, got {c2}")
    arr = as_real_vector(g)
    # Rescaling can land a round-off ulp above the bound; repeat until
    # strictly inside so the result is a fixed point of the clip.
    for _ in range(4):
        norm = float(np.linalg.norm(arr))
        if norm <= c2:
            return arr
        arr = arr * (c2 / norm)
    raise AssertionError("l2 clip failed to converge")


def local_dp_noise(
    g, sigma: float, n_honest: int, rng: np.random.Generator
) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2 / n_honest) noise per entry.

    Summing the noise of n_honest such clients yields variance sigma^2
    per entry of the aggregate.  sigma = 0 is the identity.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if n_honest < 1:
        raise ValueError(f"n_honest must be >= 1, got {n_honest}")
    arr = as_real_vector(g)
    if sigma == 0:
        return arr
    scale = sigma / math.sqrt(n_honest)
    return arr + rng.normal(0.0, scale, size=arr.size)


def aggregate_noise_variance(params: DpParams, sigma: float) -> dict[str, float]:
    """Per-entry variance of the aggregate noise under both accountings.

    ``honest_only``: the n_honest clients each adding sigma^2/n_honest.
    ``all_clients``: every one of the N clients adding sigma^2/n_honest
    (the simulator default).
    ``colluders_full``: n_honest clients adding sigma^2/n_honest plus
    N - n_honest colluders adding full sigma^2, i.e.
    (1 + N - n_honest) * sigma^2.
    """
    per_client = sigma**2 / params.n_honest
    return {
        "per_client": per_client,
        "honest_only": sigma**2,
        "all_clients": params.n_clients * per_client,
        "colluders_full": (1 + params.n_clients - params.n_honest) * sigma**2,
    }
