"""Client side of one training round.

Flow: fetch the round configuration, re-check it through repeated
anonymous hash queries (a server that serves different configurations
to different requests cannot answer those consistently), compute and
quantize the local gradient, subtract K seed-expanded masks, and hand
the resulting K+1 messages to the anonymization network with
independent uniform send times.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dp as dp_mod
from .errors import ConfigRejected, DataError, EquivocationError
from .group_math import GroupVector, gsum, serialize, sub
from .mask import SUPPORTED_PRG_VERSIONS, Seed, sample_seeds, expand
from .messages import (
    MSG_MASKED_GRADIENT,
    MSG_NOISE_SEED,
    RoundConfig,
    RoundMessage,
    config_digest,
)
from .quantizer import clip_linf, quantize

logger = logging.getLogger(__name__)

# Below this many bits per entry a lying server could leave the
# masking group small enough to brute-force; refuse by default.
RECOMMENDED_MIN_M_TILDE = 48

GradientFn = Callable[[np.ndarray, object], np.ndarray]
HashOracle = Callable[[], Optional[bytes]]

_warned_low_k: set[tuple[int, int]] = set()


@dataclass(frozen=True)
class ClientPolicy:
    """Client-side acceptance rules for offered configurations."""

    min_m_tilde: int = RECOMMENDED_MIN_M_TILDE
    hash_checks: int = 3  # repeat count r for equivocation detection


@dataclass
class ClientRound:
    """Everything one client produced for a round.

    ``messages``/``send_times`` is what leaves the machine; the rest is
    client-private state kept for tests and the attack experiments.
    """

    messages: list[RoundMessage]
    send_times: np.ndarray
    quantized: GroupVector
    masked: GroupVector
    seeds: tuple[Seed, ...]
    clipped_gradient: np.ndarray = field(repr=False, default=None)


def check_policy(config: RoundConfig, policy: ClientPolicy) -> None:
    """Refuse configurations the client considers unsafe to join."""
    if config.prg_version not in SUPPORTED_PRG_VERSIONS:
        raise ConfigRejected(
            f"unknown stream-generator version {config.prg_version:#x}"
        )
    if config.quant.m_tilde < policy.min_m_tilde:
        raise ConfigRejected(
            f"m_tilde={config.quant.m_tilde} below policy minimum "
            f"{policy.min_m_tilde}"
        )
    secure_k = math.ceil(config.dim * config.quant.m * 0.5)
    if config.masks_per_client < secure_k:
        key = (config.masks_per_client, secure_k)
        if key not in _warned_low_k:
            _warned_low_k.add(key)
            logger.warning(
                "K=%d is below d*m/2=%d; mask recovery is easier than the "
                "hardest subset-sum regime (desk-scale setting only)",
                config.masks_per_client,
                secure_k,
            )


def verify_round_config(
    config: RoundConfig, hash_oracle: HashOracle, r: int
) -> None:
    """Check the held config against r independently fetched digests.

    Each oracle call must travel through a fresh anonymized channel so
    the server cannot recognize repeat queries.  Any mismatch or timeout
    aborts the round.  r = 0 accepts vacuously and is flagged as
    insecure.
    """
    if r == 0:
        logger.warning(
            "round %d accepted without hash checks (r=0): equivocation "
            "would go undetected",
            config.round,
        )
        return
    local = config_digest(config)
    for i in range(r):
        remote = hash_oracle()
        if remote is None:
            raise EquivocationError(
                f"hash check {i + 1}/{r} timed out in round {config.round}"
            )
        if remote != local:
            raise EquivocationError(
                f"hash check {i + 1}/{r} returned a different config digest "
                f"in round {config.round}"
            )


def prepare_round(
    config: RoundConfig,
    local_data,
    rng: np.random.Generator,
    gradient_fn: GradientFn,
    dp_params: dp_mod.DpParams | None = None,
) -> ClientRound:
    """Build the K+1 unlinkable messages for one round.

    The gradient is computed by the injected ``gradient_fn`` (the
    protocol sums arbitrary vectors; gradient descent is just the
    driving application).  With DP enabled the noise goes in before the
    L-infinity clip so the quantizer's range preconditions still hold.
    """
    g = np.asarray(gradient_fn(config.params, local_data), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise DataError("local gradient has non-finite entries")
    if dp_params is not None:
        g = dp_mod.clip_l2(g, dp_params.l2_sensitivity)
        sigma = dp_mod.gaussian_sigma(dp_params)
        g = dp_mod.local_dp_noise(g, sigma, dp_params.n_honest, rng)

    quant = config.quant
    clipped = clip_linf(g, quant)
    qv = quantize(clipped, quant, rng)

    k = config.masks_per_client
    seeds = sample_seeds(k, config.seed_bits, rng)
    masks = [expand(s, qv.d, quant.m, config.prg_version) for s in seeds]
    masked = sub(qv, gsum(masks, qv.d, quant.m))

    messages = [RoundMessage(MSG_MASKED_GRADIENT, config.round, serialize(masked))]
    messages += [
        RoundMessage(MSG_NOISE_SEED, config.round, s.to_bytes()) for s in seeds
    ]
    send_times = rng.uniform(0.0, config.round_length_s, size=k + 1)
    return ClientRound(
        messages=messages,
        send_times=send_times,
        quantized=qv,
        masked=masked,
        seeds=seeds,
        clipped_gradient=clipped,
    )


class Client:
    """One participant; holds its data shard and per-client randomness."""

    def __init__(
        self,
        local_data,
        gradient_fn: GradientFn,
        rng: np.random.Generator,
        policy: ClientPolicy | None = None,
        dp_params: dp_mod.DpParams | None = None,
    ):
        self.local_data = local_data
        self.gradient_fn = gradient_fn
        self.rng = rng
        self.policy = policy or ClientPolicy()
        self.dp_params = dp_params

    def run_round(self, config: RoundConfig, hash_oracle: HashOracle) -> ClientRound:
        """Verify the config, then produce this round's messages.

        Raises ConfigRejected / EquivocationError / DataError; on abort
        the client sends nothing and the round will void on the server.
        """
        check_policy(config, self.policy)
        verify_round_config(config, hash_oracle, self.policy.hash_checks)
        return prepare_round(
            config, self.local_data, self.rng, self.gradient_fn, self.dp_params
        )
