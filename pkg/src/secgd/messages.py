"""Wire envelope and round configuration.

A ``RoundMessage`` is the only thing that ever crosses the network:
6 header bytes (version, type, round) followed by a type-dependent
payload.  Nothing in the envelope identifies the sender.  Each noise
seed travels in its own message -- batching several seeds would link
them to each other and collapse the unlinkability the protocol is
built on.

``RoundConfig`` is the per-round bundle a client needs before it can
participate.  Its canonical byte encoding doubles as the input to the
equivocation-detection digest, so the encoding must be bit-stable:
fixed field order, big-endian fixed-width integers, IEEE-754 doubles.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .group_math import FormatError
from .mask import SUPPORTED_PRG_VERSIONS
from .quantizer import QuantizationParams

PROTOCOL_VERSION = 0x01

MSG_MASKED_GRADIENT = 0x01
MSG_NOISE_SEED = 0x02
MSG_PARAM_REQUEST = 0x03
MSG_HASH_REQUEST = 0x04

_MSG_TYPES = (
    MSG_MASKED_GRADIENT,
    MSG_NOISE_SEED,
    MSG_PARAM_REQUEST,
    MSG_HASH_REQUEST,
)

HEADER_LEN = 6  # version (1) + msg_type (1) + round (4)

REGULARIZER_NONE = "none"
REGULARIZER_L2 = "l2"
_REGULARIZER_CODES = {REGULARIZER_NONE: 0, REGULARIZER_L2: 1}
_REGULARIZER_NAMES = {v: k for k, v in _REGULARIZER_CODES.items()}


@dataclass(frozen=True)
class RoundMessage:
    """One protocol message: (version, msg_type, round, payload)."""

    msg_type: int
    round: int
    payload: bytes = b""
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.msg_type not in _MSG_TYPES:
            raise ValueError(f"unknown message type {self.msg_type:#x}")
        if not 0 <= self.round < 2**32:
            raise ValueError(f"round {self.round} out of u32 range")

    def to_bytes(self) -> bytes:
        return (
            bytes((self.version, self.msg_type))
            + self.round.to_bytes(4, "big")
            + self.payload
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "RoundMessage":
        if len(data) < HEADER_LEN:
            raise FormatError(f"message shorter than header: {len(data)} bytes")
        version, msg_type = data[0], data[1]
        if version != PROTOCOL_VERSION:
            raise FormatError(f"unsupported protocol version {version:#x}")
        if msg_type not in _MSG_TYPES:
            raise FormatError(f"unknown message type {msg_type:#x}")
        rnd = int.from_bytes(data[2:6], "big")
        return cls(msg_type, rnd, data[HEADER_LEN:])


@dataclass(frozen=True, eq=False)
class RoundConfig:
    """Everything a client needs for one training round.

    Honest servers serve one identical config to every request in a
    round; clients enforce this through repeated anonymous hash checks
    against :func:`config_digest`.  Two configs are equal exactly when
    their canonical encodings are.
    """

    round: int
    params: np.ndarray  # model parameter vector w, float64
    round_length_s: float
    n_clients: int
    masks_per_client: int  # K
    seed_bits: int  # q
    quant: QuantizationParams
    eta: float
    weight_decay: float
    regularizer: str = REGULARIZER_NONE
    prg_version: int = field(default=SUPPORTED_PRG_VERSIONS[0])

    def __post_init__(self):
        if self.masks_per_client < 1:
            raise ValueError("K must be >= 1")
        if self.round_length_s <= 0:
            raise ValueError("round length must be positive")
        if self.regularizer not in _REGULARIZER_CODES:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.n_clients != self.quant.n_clients:
            raise ValueError("n_clients disagrees with quantization params")
        arr = np.ascontiguousarray(np.asarray(self.params, dtype=np.float64))
        object.__setattr__(self, "params", arr)

    @property
    def dim(self) -> int:
        return int(self.params.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoundConfig):
            return NotImplemented
        return encode_config(self) == encode_config(other)

    def __hash__(self) -> int:
        return hash(encode_config(self))


_FIXED_HEAD = struct.Struct(">IIIHBBB")  # round, N, K, q, m_tilde, f, prg_version
_FIXED_TAIL = struct.Struct(">dddBI")  # round_length, eta, weight_decay, reg, dim


def encode_config(config: RoundConfig) -> bytes:
    """Canonical byte encoding; the digest input and ParamRequest reply."""
    head = _FIXED_HEAD.pack(
        config.round,
        config.n_clients,
        config.masks_per_client,
        config.seed_bits,
        config.quant.m_tilde,
        config.quant.f,
        config.prg_version,
    )
    tail = _FIXED_TAIL.pack(
        config.round_length_s,
        config.eta,
        config.weight_decay,
        _REGULARIZER_CODES[config.regularizer],
        config.dim,
    )
    return head + tail + config.params.astype(">f8").tobytes()


def decode_config(data: bytes) -> RoundConfig:
    """Inverse of :func:`encode_config`."""
    fixed = _FIXED_HEAD.size + _FIXED_TAIL.size
    if len(data) < fixed:
        raise FormatError(f"config too short: {len(data)} bytes")
    rnd, n, k, q, m_tilde, f, prg = _FIXED_HEAD.unpack_from(data, 0)
    length, eta, wd, reg_code, dim = _FIXED_TAIL.unpack_from(data, _FIXED_HEAD.size)
    if reg_code not in _REGULARIZER_NAMES:
        raise FormatError(f"unknown regularizer code {reg_code}")
    expected = fixed + 8 * dim
    if len(data) != expected:
        raise FormatError(f"expected {expected} config bytes, got {len(data)}")
    params = np.frombuffer(data, dtype=">f8", count=dim, offset=fixed).astype(
        np.float64
    )
    return RoundConfig(
        round=rnd,
        params=params,
        round_length_s=length,
        n_clients=n,
        masks_per_client=k,
        seed_bits=q,
        quant=QuantizationParams(m_tilde=m_tilde, f=f, n_clients=n),
        eta=eta,
        weight_decay=wd,
        regularizer=_REGULARIZER_NAMES[reg_code],
        prg_version=prg,
    )


def config_digest(config: RoundConfig) -> bytes:
    """32-byte SHA-256 over the canonical config encoding."""
    return hashlib.sha256(encode_config(config)).digest()
