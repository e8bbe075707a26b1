import dataclasses

import numpy as np
import pytest

from secgd.group_math import FormatError
from secgd.messages import (
    HEADER_LEN,
    MSG_HASH_REQUEST,
    MSG_MASKED_GRADIENT,
    MSG_NOISE_SEED,
    MSG_PARAM_REQUEST,
    RoundConfig,
    RoundMessage,
    config_digest,
    decode_config,
    encode_config,
)
from secgd.quantizer import QuantizationParams


def make_config(**overrides):
    base = dict(
        round=3,
        params=np.array([0.5, -1.25, 2.0]),
        round_length_s=10.0,
        n_clients=4,
        masks_per_client=6,
        seed_bits=32,
        quant=QuantizationParams(m_tilde=8, f=4, n_clients=4),
        eta=0.1,
        weight_decay=0.01,
        regularizer="l2",
    )
    base.update(overrides)
    return RoundConfig(**base)


class TestRoundMessage:
    def test_header_is_six_bytes(self):
        msg = RoundMessage(MSG_PARAM_REQUEST, 7)
        assert len(msg.to_bytes()) == HEADER_LEN

    def test_round_trip(self):
        msg = RoundMessage(MSG_MASKED_GRADIENT, 123456, b"\x01\x02\x03")
        assert RoundMessage.from_bytes(msg.to_bytes()) == msg

    def test_no_sender_field(self):
        names = {f.name for f in dataclasses.fields(RoundMessage)}
        assert names == {"version", "msg_type", "round", "payload"}

    def test_rejects_unknown_type(self):
        with pytest.raises(ValueError):
            RoundMessage(0x99, 0)
        with pytest.raises(FormatError):
            RoundMessage.from_bytes(bytes([0x01, 0x99, 0, 0, 0, 0]))

    def test_rejects_unknown_version(self):
        with pytest.raises(FormatError):
            RoundMessage.from_bytes(bytes([0x02, MSG_NOISE_SEED, 0, 0, 0, 0]))

    def test_rejects_short_buffer(self):
        with pytest.raises(FormatError):
            RoundMessage.from_bytes(b"\x01\x01")

    def test_round_bounds(self):
        RoundMessage(MSG_HASH_REQUEST, 2**32 - 1)
        with pytest.raises(ValueError):
            RoundMessage(MSG_HASH_REQUEST, 2**32)


class TestRoundConfig:
    def test_canonical_round_trip(self):
        cfg = make_config()
        decoded = decode_config(encode_config(cfg))
        assert decoded == cfg
        assert encode_config(decoded) == encode_config(cfg)

    def test_digest_is_32_bytes_and_stable(self):
        cfg = make_config()
        assert len(config_digest(cfg)) == 32
        assert config_digest(cfg) == config_digest(make_config())

    @pytest.mark.parametrize(
        "change",
        [
            {"round": 4},
            {"round_length_s": 11.0},
            {"n_clients": 5, "quant": QuantizationParams(8, 4, 5)},
            {"masks_per_client": 7},
            {"seed_bits": 33},
            {"quant": QuantizationParams(9, 4, 4)},
            {"quant": QuantizationParams(8, 3, 4)},
            {"eta": 0.2},
            {"weight_decay": 0.02},
            {"regularizer": "none"},
            {"params": np.array([0.5, -1.25, 2.5])},
            {"params": np.array([0.5, -1.25])},
        ],
    )
    def test_digest_changes_with_any_field(self, change):
        assert config_digest(make_config(**change)) != config_digest(make_config())

    def test_decode_rejects_truncation(self):
        data = encode_config(make_config())
        with pytest.raises(FormatError):
            decode_config(data[:-1])
        with pytest.raises(FormatError):
            decode_config(data + b"\x00")

    def test_validation(self):
        with pytest.raises(ValueError):
            make_config(masks_per_client=0)
        with pytest.raises(ValueError):
            make_config(round_length_s=0.0)
        with pytest.raises(ValueError):
            make_config(regularizer="l3")
        with pytest.raises(ValueError):
            make_config(n_clients=3)  # disagrees with quant
