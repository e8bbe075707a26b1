"""Experiment configuration and its flat key-value file format.

The format is line-oriented: ``key = value``, one per line, ``#``
comments and blank lines ignored on input.  The canonical encoding
produced by :func:`dumps_config` writes every field in a fixed order
with round-trip-exact value spellings, so a config file can be hashed,
diffed, and re-emitted byte-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

from .mask import seed_bits as seed_bits_for
from .messages import REGULARIZER_L2, REGULARIZER_NONE
from .quantizer import QuantizationParams
from .server import SERVER_MODES

TRANSPORT_IN_PROCESS = "in-process"
TRANSPORT_TCP = "tcp-loopback"
TRANSPORTS = (TRANSPORT_IN_PROCESS, TRANSPORT_TCP)

DATASET_LINEAR = "linear"
DATASET_LOGISTIC = "logistic"
DATASETS = (DATASET_LINEAR, DATASET_LOGISTIC)

SCENARIO_RECOVERY = "recovery"
SCENARIOS = (SCENARIO_RECOVERY,)

AUTO = "auto"


@dataclass
class ExperimentConfig:
    """One simulation: protocol parameters, data, threat setting."""

    n_clients: int = 4
    rounds: int = 10
    dim: int = 8
    m_tilde: int = 20
    fraction_bits: int = 10
    masks_per_client: int | str = AUTO  # K; auto = ceil(d*m/2)
    seed_bits: int | str = AUTO  # q; auto = from collision_p
    collision_p: float = 1e-10
    round_length_s: float = 10.0
    eta: float = 0.1
    weight_decay: float = 0.0
    regularizer: str = REGULARIZER_NONE
    dataset: str = DATASET_LINEAR
    samples_per_client: int = 32
    feature_dist: str = "normal"  # normal | uniform
    feature_scale: float = 1.0
    label_noise: float = 0.1
    data_seed: int = 1
    dp_enabled: bool = False
    dp_epsilon: float = 1.0
    dp_delta: float = 1e-5
    dp_l2_sensitivity: float = 1.0
    dp_honest_clients: int = 2
    transport: str = TRANSPORT_IN_PROCESS
    drop_probability: float = 0.0
    latency: float = 0.0
    latency_kind: str = "uniform"
    latency_budget: Optional[float] = None
    hash_checks: int = 3
    retry_limit: int = 3
    min_m_tilde: int = 1
    server_mode: str = "honest"
    scenarios: str = ""  # comma-separated subset of SCENARIOS
    wall_clock_scale: float = 0.0  # >0: sleep scale seconds per virtual second

    def validate(self) -> None:
        if self.n_clients < 2:
            raise ValueError("need at least 2 clients")
        if self.rounds < 1:
            raise ValueError("need at least 1 round")
        if self.transport not in TRANSPORTS:
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.regularizer not in (REGULARIZER_NONE, REGULARIZER_L2):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.server_mode not in SERVER_MODES:
            raise ValueError(f"unknown server mode {self.server_mode!r}")
        if self.latency_kind not in ("uniform", "exponential"):
            raise ValueError(f"unknown latency kind {self.latency_kind!r}")
        for s in self.scenario_list():
            if s not in SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}")
        # Resolving derives m, K, q and validates their interactions.
        self.resolve_protocol()

    def scenario_list(self) -> list[str]:
        return [s.strip() for s in self.scenarios.split(",") if s.strip()]

    def resolve_protocol(self) -> tuple[QuantizationParams, int, int]:
        """Derive (quantization params, K, q) from the raw fields."""
        quant = QuantizationParams(
            m_tilde=self.m_tilde, f=self.fraction_bits, n_clients=self.n_clients
        )
        if self.masks_per_client == AUTO:
            k = math.ceil(self.dim * quant.m / 2)
        else:
            k = int(self.masks_per_client)
            if k < 1:
                raise ValueError("masks_per_client must be >= 1")
        if self.seed_bits == AUTO:
            q = seed_bits_for(k, self.collision_p)
        else:
            q = int(self.seed_bits)
            if not 1 <= q <= 256:
                raise ValueError("seed_bits must be in [1, 256]")
        return quant, k, q


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name: str, text: str, annotation: str):
    if annotation == "int":
        return int(text)
    if annotation == "float":
        return float(text)
    if annotation == "bool":
        if text not in ("true", "false"):
            raise ValueError(f"{name}: expected true/false, got {text!r}")
        return text == "true"
    if annotation == "int | str":
        return AUTO if text == AUTO else int(text)
    if annotation == "Optional[float]":
        return None if text == "none" else float(text)
    return text  # str


def _field_kinds() -> list[tuple[str, str]]:
    return [(f.name, str(f.type)) for f in fields(ExperimentConfig)]


def dumps_config(config: ExperimentConfig) -> str:
    """Canonical text encoding: every field, declaration order."""
    lines = [
        f"{name} = {_format_value(getattr(config, name))}"
        for name, _ in _field_kinds()
    ]
    return "\n".join(lines) + "\n"


def loads_config(text: str) -> ExperimentConfig:
    """Parse the key-value format; unknown keys are errors, missing keys
    fall back to defaults."""
    kinds = dict(_field_kinds())
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in kinds:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val, kinds[key])
    config = ExperimentConfig(**values)
    config.validate()
    return config


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())
