"""Server side: publish the round, collect messages, recover the sum.

The server counts messages by type only -- anonymity means it cannot
tell senders apart, so "got N masked gradients and N*K seeds" is the
entire completeness check.  Any shortfall voids the round; the partial
sum is uniform noise and is never exposed.

The aggregate is a pure function of the received multisets: seeds are
re-expanded with the shared generator, everything is summed in
Z_{2^m}^d, and the fixed-point shift is undone on the total.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import RoundVoid, TrainingDiverged
from .group_math import FormatError, GroupVector, deserialize, gsum
from .mask import Seed, expand
from .messages import (
    MSG_HASH_REQUEST,
    MSG_MASKED_GRADIENT,
    MSG_NOISE_SEED,
    MSG_PARAM_REQUEST,
    REGULARIZER_L2,
    REGULARIZER_NONE,
    RoundConfig,
    RoundMessage,
    config_digest,
    encode_config,
)
from .quantizer import QuantizationParams, dequantize_sum

logger = logging.getLogger(__name__)

EtaSchedule = Callable[[int], float]


def constant_eta(eta: float) -> EtaSchedule:
    return lambda t: eta


@dataclass(frozen=True)
class ModelState:
    """Model parameters plus the update-rule configuration."""

    w: np.ndarray
    t: int = 0
    eta_schedule: EtaSchedule = field(default=constant_eta(0.1))
    weight_decay: float = 0.0
    regularizer: str = REGULARIZER_NONE

    def __post_init__(self):
        arr = np.asarray(self.w, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "w", arr)
        if self.regularizer not in (REGULARIZER_NONE, REGULARIZER_L2):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")


def update_model(state: ModelState, g: np.ndarray, n_clients: int) -> ModelState:
    """w <- w - eta_t * (g / N + weight_decay * grad R(w)); bumps t."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.w.shape:
        raise ValueError(f"gradient shape {g.shape} != params {state.w.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient must be finite")
    eta = state.eta_schedule(state.t)
    with np.errstate(over="ignore", invalid="ignore"):
        step = g / n_clients
        if state.regularizer == REGULARIZER_L2:
            step = step + state.weight_decay * state.w
        w_next = state.w - eta * step
    if not np.all(np.isfinite(w_next)):
        raise TrainingDiverged(f"non-finite parameters after round {state.t}")
    return replace(state, w=w_next, t=state.t + 1)


@dataclass
class RoundLedger:
    """Multisets of received payloads for one round, by message type."""

    round: int
    expected_masked: int  # N
    expected_seeds: int  # N * K
    quant: QuantizationParams
    dim: int
    seed_bits: int
    prg_version: int
    masked: list[GroupVector] = field(default_factory=list)
    seeds: list[Seed] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def ingest(self, message: RoundMessage) -> None:
        """Append one delivered message; safe for concurrent callers."""
        if message.round != self.round:
            raise FormatError(
                f"message for round {message.round} in ledger {self.round}"
            )
        if message.msg_type == MSG_MASKED_GRADIENT:
            vec = deserialize(message.payload, self.dim, self.quant.m)
            with self._lock:
                if len(self.masked) >= self.expected_masked:
                    raise FormatError("more masked gradients than clients")
                self.masked.append(vec)
        elif message.msg_type == MSG_NOISE_SEED:
            seed = Seed.from_bytes(message.payload, self.seed_bits)
            with self._lock:
                if len(self.seeds) >= self.expected_seeds:
                    raise FormatError("more seeds than N*K")
                self.seeds.append(seed)
        else:
            raise FormatError(
                f"message type {message.msg_type:#x} does not belong in a ledger"
            )

    def is_complete(self) -> bool:
        return (
            len(self.masked) == self.expected_masked
            and len(self.seeds) == self.expected_seeds
        )


def aggregate_group(ledger: RoundLedger) -> GroupVector:
    """Exact integer aggregate in Z_{2^m}^d, or RoundVoid on shortfall."""
    if not ledger.is_complete():
        raise RoundVoid(
            missing_masked=ledger.expected_masked - len(ledger.masked),
            missing_seeds=ledger.expected_seeds - len(ledger.seeds),
        )
    d, m = ledger.dim, ledger.quant.m
    expanded = (expand(s, d, m, ledger.prg_version) for s in ledger.seeds)
    return gsum(list(ledger.masked) + list(expanded), d, m)


def aggregate(ledger: RoundLedger, quant: QuantizationParams) -> np.ndarray:
    """Real-valued global gradient recovered from a complete round."""
    return dequantize_sum(aggregate_group(ledger), quant)


# Request-handling behaviour for the simulated malicious server.
MODE_HONEST = "honest"
# Alternate two configs across every anonymous request (params and
# hashes).  A client holding either config is guaranteed to see the
# other digest within two checks.
MODE_EQUIVOCATE_ALTERNATE = "equivocate-alternate"
# First param request gets the doctored config, everyone else the
# primary; hash queries answer for the primary only.  Only the victim
# observes mismatches.
MODE_EQUIVOCATE_VICTIM = "equivocate-victim"

SERVER_MODES = (MODE_HONEST, MODE_EQUIVOCATE_ALTERNATE, MODE_EQUIVOCATE_VICTIM)


class Server:
    """Holds the model, publishes rounds, and answers anonymous requests."""

    def __init__(
        self,
        state: ModelState,
        round_length_s: float,
        n_clients: int,
        masks_per_client: int,
        seed_bits: int,
        quant: QuantizationParams,
        mode: str = MODE_HONEST,
    ):
        if mode not in SERVER_MODES:
            raise ValueError(f"unknown server mode {mode!r}")
        self.state = state
        self.round_length_s = round_length_s
        self.n_clients = n_clients
        self.masks_per_client = masks_per_client
        self.seed_bits = seed_bits
        self.quant = quant
        self.mode = mode
        self.ledger: RoundLedger | None = None
        self._config: RoundConfig | None = None
        self._alt_config: RoundConfig | None = None
        self._request_counter = 0

    def _make_config(self, params: np.ndarray) -> RoundConfig:
        return RoundConfig(
            round=self.state.t,
            params=params,
            round_length_s=self.round_length_s,
            n_clients=self.n_clients,
            masks_per_client=self.masks_per_client,
            seed_bits=self.seed_bits,
            quant=self.quant,
            eta=self.state.eta_schedule(self.state.t),
            weight_decay=self.weight_decay,
            regularizer=self.state.regularizer,
        )

    @property
    def weight_decay(self) -> float:
        return self.state.weight_decay

    def publish_round(self) -> tuple[RoundConfig, bytes]:
        """Open a round: fix the config, reset the ledger, return digest."""
        self._config = self._make_config(self.state.w)
        if self.mode != MODE_HONEST:
            # The doctored copy differs only in the parameter vector.
            self._alt_config = self._make_config(self.state.w + 1.0)
        self._request_counter = 0
        self.ledger = RoundLedger(
            round=self.state.t,
            expected_masked=self.n_clients,
            expected_seeds=self.n_clients * self.masks_per_client,
            quant=self.quant,
            dim=int(self.state.w.size),
            seed_bits=self.seed_bits,
            prg_version=self._config.prg_version,
        )
        return self._config, config_digest(self._config)

    def _config_for_request(self) -> RoundConfig:
        idx = self._request_counter
        self._request_counter += 1
        if self.mode == MODE_HONEST:
            return self._config
        if self.mode == MODE_EQUIVOCATE_ALTERNATE:
            return self._config if idx % 2 == 0 else self._alt_config
        # Victim mode: requests are anonymous, so the server can only
        # target by position; it poisons the first fetch.
        if self.mode == MODE_EQUIVOCATE_VICTIM:
            if idx == 0:
                return self._alt_config
            return self._config
        raise AssertionError(self.mode)

    def handle_request(self, message: RoundMessage) -> bytes:
        """Serve ParamRequest / HashRequest; sees no sender identity."""
        if self._config is None:
            raise RuntimeError("no open round")
        if message.msg_type == MSG_PARAM_REQUEST:
            return encode_config(self._config_for_request())
        if message.msg_type == MSG_HASH_REQUEST:
            if self.mode == MODE_EQUIVOCATE_ALTERNATE:
                return config_digest(self._config_for_request())
            # Honest servers (and the victim-mode server trying to look
            # honest) answer for the one config they stand behind.
            return config_digest(self._config)
        raise FormatError(f"not a request message: type {message.msg_type:#x}")

    def ingest(self, message: RoundMessage) -> None:
        if self.ledger is None:
            raise RuntimeError("no open round")
        self.ledger.ingest(message)

    def close_round(self) -> np.ndarray:
        """Aggregate after the deadline and apply the model update.

        Raises RoundVoid on shortfall, leaving the model untouched; the
        caller restarts the round.
        """
        g = aggregate(self.ledger, self.quant)
        self.state = update_model(self.state, g, self.n_clients)
        return g
