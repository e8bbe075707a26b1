"""End-to-end orchestration: data, baselines, full simulated training.

``run_training`` drives two trainings off identical data and identical
initialization: the masked protocol through the simulated anonymization
network, and plain distributed gradient descent summing exact local
gradients.  Their parameter trajectories differ only by quantization
(and DP noise, when enabled), which the per-round L-infinity distance
records make visible.

Everything is driven by one integer seed: per-client randomness streams
and the mixnet stream are spawned from it, timestamps are virtual, and
result records contain no wall-clock values, so a rerun with the same
seed is byte-identical on the in-process transport.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import adversary as adversary_mod
from .client import Client, ClientPolicy, ClientRound
from .dp import DpParams
from .errors import (
    ConfigRejected,
    DataError,
    EquivocationError,
    ProtocolError,
    RoundVoid,
)
from .expconfig import (
    DATASET_LINEAR,
    DATASET_LOGISTIC,
    SCENARIO_RECOVERY,
    TRANSPORT_TCP,
    ExperimentConfig,
)
from .group_math import entry_bytes
from .messages import (
    HEADER_LEN,
    MSG_HASH_REQUEST,
    MSG_PARAM_REQUEST,
    RoundMessage,
    decode_config,
)
from .mixnet import (
    AdversaryView,
    AnonymousChannel,
    InProcessTransport,
    LatencyModel,
    Mixnet,
    TcpLoopbackTransport,
)
from .server import ModelState, Server, constant_eta, update_model

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Synthetic datasets and their gradients


@dataclass
class ClientData:
    features: np.ndarray  # (samples, dim)
    labels: np.ndarray  # (samples,)


@dataclass
class Dataset:
    kind: str
    clients: list[ClientData]
    w_star: np.ndarray


def make_dataset(
    kind: str,
    n_clients: int,
    dim: int,
    samples_per_client: int,
    feature_dist: str = "normal",
    feature_scale: float = 1.0,
    label_noise: float = 0.0,
    seed: int = 0,
) -> Dataset:
    """Deterministic partitioned regression/classification data."""
    rng = np.random.default_rng(seed)
    w_star = rng.normal(size=dim)
    clients = []
    for _ in range(n_clients):
        if feature_dist == "normal":
            x = rng.normal(size=(samples_per_client, dim))
        elif feature_dist == "uniform":
            x = rng.uniform(-1.0, 1.0, size=(samples_per_client, dim))
        else:
            raise ValueError(f"unknown feature distribution {feature_dist!r}")
        x = x * feature_scale
        logits = x @ w_star
        if kind == DATASET_LINEAR:
            y = logits + label_noise * rng.normal(size=samples_per_client)
        elif kind == DATASET_LOGISTIC:
            y = (rng.random(samples_per_client) < _sigmoid(logits)).astype(
                np.float64
            )
        else:
            raise ValueError(f"unknown dataset kind {kind!r}")
        clients.append(ClientData(x, y))
    return Dataset(kind, clients, w_star)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def linear_gradient(w: np.ndarray, data: ClientData) -> np.ndarray:
    resid = data.features @ w - data.labels
    return data.features.T @ resid / len(data.labels)


def logistic_gradient(w: np.ndarray, data: ClientData) -> np.ndarray:
    p = _sigmoid(data.features @ w)
    return data.features.T @ (p - data.labels) / len(data.labels)


def linear_loss(w: np.ndarray, data: ClientData) -> float:
    resid = data.features @ w - data.labels
    return float(0.5 * np.mean(resid**2))


def logistic_loss(w: np.ndarray, data: ClientData) -> float:
    z = data.features @ w
    # log(1 + e^z) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - data.labels * z))


GRADIENTS: dict[str, Callable] = {
    DATASET_LINEAR: linear_gradient,
    DATASET_LOGISTIC: logistic_gradient,
}
LOSSES: dict[str, Callable] = {
    DATASET_LINEAR: linear_loss,
    DATASET_LOGISTIC: logistic_loss,
}


# ---------------------------------------------------------------------------
# Cost accounting


@dataclass
class CostReport:
    """Measured per-client byte counts plus wall-clock compute totals.

    Byte counts are exact functions of the wire format; compute times
    are informational and never enter the deterministic record stream.
    """

    uplink_bytes_per_round: int
    downlink_bytes_per_round: int
    request_bytes_per_round: int
    client_compute_s: float = 0.0
    server_compute_s: float = 0.0


def expected_uplink_bytes(d: int, m: int, k: int, q: int) -> int:
    """d*ceil(m/8) + K*ceil(q/8) + (K+1)*header, the data-message total."""
    return d * entry_bytes(m) + k * ((q + 7) // 8) + (k + 1) * HEADER_LEN


# ---------------------------------------------------------------------------
# Training simulation


@dataclass
class RoundOutcome:
    round: int
    attempts: int
    void_attempts: int
    aborts: int
    view: AdversaryView | None
    client_rounds: list[ClientRound] | None  # private truth, for experiments


@dataclass
class TrainingResult:
    records: list[dict]
    final_w: np.ndarray
    final_w_plain: np.ndarray
    cost: CostReport
    outcomes: list[RoundOutcome] = field(default_factory=list)
    abort_reason: str | None = None


class TrainingAborted(ProtocolError):
    """Raised when a round exhausts its retries."""

    def __init__(self, message: str, result: TrainingResult):
        super().__init__(message)
        self.result = result


def run_training(config: ExperimentConfig, seed: int = 0) -> TrainingResult:
    """Run the masked protocol and its plaintext twin for T rounds."""
    config.validate()
    quant, k, q = config.resolve_protocol()
    n, d = config.n_clients, config.dim

    dataset = make_dataset(
        config.dataset,
        n,
        d,
        config.samples_per_client,
        config.feature_dist,
        config.feature_scale,
        config.label_noise,
        config.data_seed,
    )
    gradient_fn = GRADIENTS[config.dataset]
    loss_fn = LOSSES[config.dataset]

    dp_params = None
    if config.dp_enabled:
        dp_params = DpParams(
            epsilon=config.dp_epsilon,
            delta=config.dp_delta,
            l2_sensitivity=config.dp_l2_sensitivity,
            n_clients=n,
            n_honest=config.dp_honest_clients,
        )

    streams = np.random.SeedSequence(seed).spawn(n + 1)
    policy = ClientPolicy(
        min_m_tilde=config.min_m_tilde, hash_checks=config.hash_checks
    )
    clients = [
        Client(
            dataset.clients[i],
            gradient_fn,
            np.random.default_rng(streams[i]),
            policy=policy,
            dp_params=dp_params,
        )
        for i in range(n)
    ]

    w0 = np.zeros(d)
    server = Server(
        state=ModelState(
            w=w0,
            t=0,
            eta_schedule=constant_eta(config.eta),
            weight_decay=config.weight_decay,
            regularizer=config.regularizer,
        ),
        round_length_s=config.round_length_s,
        n_clients=n,
        masks_per_client=k,
        seed_bits=q,
        quant=quant,
        mode=config.server_mode,
    )
    transport = (
        TcpLoopbackTransport()
        if config.transport == TRANSPORT_TCP
        else InProcessTransport()
    )
    mixnet = Mixnet(
        rng=np.random.default_rng(streams[n]),
        deliver_cb=lambda msg, _t: server.ingest(msg),
        latency=LatencyModel(config.latency_kind, config.latency),
        drop_probability=config.drop_probability,
        latency_budget=config.latency_budget,
        transport=transport,
        wall_clock_scale=config.wall_clock_scale,
    )

    plain = ModelState(
        w=w0.copy(),
        t=0,
        eta_schedule=constant_eta(config.eta),
        weight_decay=config.weight_decay,
        regularizer=config.regularizer,
    )
    scenarios = config.scenario_list()

    records: list[dict] = []
    outcomes: list[RoundOutcome] = []
    client_time = 0.0
    server_time = 0.0
    cost_uplink = cost_downlink = cost_requests = 0

    try:
        for t in range(config.rounds):
            void_attempts = 0
            round_done = False
            last_aborts = 0
            for attempt in range(config.retry_limit + 1):
                _, _digest = server.publish_round()
                mixnet.open_round(t, config.round_length_s)
                client_rounds: list[ClientRound | None] = []
                aborts = 0
                abort_reason = None
                uplink = downlink = requests = 0
                for client in clients:
                    channel = AnonymousChannel(server.handle_request)
                    t0 = time.perf_counter()
                    try:
                        param_req = RoundMessage(MSG_PARAM_REQUEST, t)
                        requests += len(param_req.to_bytes())
                        cfg_bytes = channel.request(param_req)
                        downlink += len(cfg_bytes)
                        cfg = decode_config(cfg_bytes)

                        def hash_oracle():
                            nonlocal requests, downlink
                            req = RoundMessage(MSG_HASH_REQUEST, t)
                            requests += len(req.to_bytes())
                            digest = channel.request(req)
                            downlink += len(digest)
                            return digest

                        art = client.run_round(cfg, hash_oracle)
                    except (EquivocationError, ConfigRejected, DataError) as exc:
                        aborts += 1
                        abort_reason = type(exc).__name__
                        client_rounds.append(None)
                        client_time += time.perf_counter() - t0
                        continue
                    client_time += time.perf_counter() - t0
                    client_rounds.append(art)
                    for msg, st in zip(art.messages, art.send_times):
                        uplink += len(msg.to_bytes())
                        mixnet.submit(msg, float(st))
                view = mixnet.close_round()
                last_aborts = aborts
                t0 = time.perf_counter()
                try:
                    server.close_round()
                except RoundVoid as rv:
                    server_time += time.perf_counter() - t0
                    void_attempts += 1
                    records.append(
                        {
                            "record": "void",
                            "round": t,
                            "attempt": attempt,
                            "missing_masked": rv.missing_masked,
                            "missing_seeds": rv.missing_seeds,
                            "aborts": aborts,
                            "abort_reason": abort_reason,
                        }
                    )
                    continue
                server_time += time.perf_counter() - t0

                # Success: advance the plaintext twin and record.
                g_plain = np.sum(
                    [gradient_fn(plain.w, dc) for dc in dataset.clients], axis=0
                )
                plain = update_model(plain, g_plain, n)
                dist = float(np.max(np.abs(server.state.w - plain.w)))
                losses = [loss_fn(server.state.w, dc) for dc in dataset.clients]
                losses_plain = [loss_fn(plain.w, dc) for dc in dataset.clients]
                record = {
                    "record": "round",
                    "round": t,
                    "attempt": attempt,
                    "aborts": aborts,
                    "loss_secgd": float(np.mean(losses)),
                    "loss_plain": float(np.mean(losses_plain)),
                    "winf_dist": dist,
                }
                if SCENARIO_RECOVERY in scenarios:
                    record["recovery_hits"] = _recovery_scenario(
                        view, client_rounds, k, q
                    )
                records.append(record)
                outcomes.append(
                    RoundOutcome(t, attempt + 1, void_attempts, aborts, view,
                                 client_rounds)
                )
                # A completed round has every client participating.
                cost_uplink = uplink // n
                cost_downlink = downlink // n
                cost_requests = requests // n
                round_done = True
                break
            if not round_done:
                reason = (
                    "equivocation detected"
                    if last_aborts > 0
                    else "dropout retries exhausted"
                )
                cost = CostReport(
                    cost_uplink, cost_downlink, cost_requests,
                    client_time, server_time,
                )
                result = TrainingResult(
                    records, server.state.w, plain.w, cost, outcomes, reason
                )
                raise TrainingAborted(
                    f"round {t} failed after {config.retry_limit + 1} attempts: "
                    f"{reason}",
                    result,
                )
    finally:
        mixnet.close()

    records.append(
        {
            "record": "cost",
            "uplink_bytes_per_round": cost_uplink,
            "downlink_bytes_per_round": cost_downlink,
            "request_bytes_per_round": cost_requests,
        }
    )
    records.append(
        {
            "record": "summary",
            "rounds": config.rounds,
            "final_winf_dist": float(
                np.max(np.abs(server.state.w - plain.w))
            ),
            "void_rounds": sum(1 for r in records if r["record"] == "void"),
        }
    )
    cost = CostReport(
        cost_uplink, cost_downlink, cost_requests, client_time, server_time
    )
    logger.info(
        "training done: client compute %.3fs, server compute %.3fs",
        client_time,
        server_time,
    )
    return TrainingResult(records, server.state.w, plain.w, cost, outcomes)


def _recovery_scenario(
    view: AdversaryView,
    client_rounds: list[ClientRound | None],
    k: int,
    q: int,
) -> list[bool]:
    """For each client, attack its true quantized gradient against the
    round's view; completeness means every entry comes back True."""
    hits = []
    for art in client_rounds:
        if art is None:
            continue
        results = adversary_mod.gradient_recovery_attack(
            view, art.quantized, k, q
        )
        hits.append(bool(any(r.found for r in results)))
    return hits
