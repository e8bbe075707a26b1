import dataclasses

import numpy as np
import pytest

from secgd.errors import RoundVoid
from secgd.expconfig import (
    ExperimentConfig,
    dumps_config,
    loads_config,
)
from secgd.harness import (
    TrainingAborted,
    expected_uplink_bytes,
    linear_gradient,
    linear_loss,
    logistic_gradient,
    make_dataset,
    run_training,
)


def desk_config(**overrides):
    base = dict(
        n_clients=3,
        rounds=4,
        dim=3,
        m_tilde=8,
        fraction_bits=4,
        masks_per_client=2,
        seed_bits=32,
        samples_per_client=8,
        min_m_tilde=1,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestDataset:
    def test_deterministic(self):
        a = make_dataset("linear", 3, 4, 10, seed=5)
        b = make_dataset("linear", 3, 4, 10, seed=5)
        assert np.array_equal(a.w_star, b.w_star)
        for ca, cb in zip(a.clients, b.clients):
            assert np.array_equal(ca.features, cb.features)
            assert np.array_equal(ca.labels, cb.labels)

    def test_single_client_holds_everything(self):
        ds = make_dataset("linear", 1, 4, 10, seed=5)
        assert len(ds.clients) == 1
        assert ds.clients[0].features.shape == (10, 4)

    def test_noiseless_linear_descent_converges(self):
        ds = make_dataset("linear", 2, 3, 50, label_noise=0.0, seed=6)
        w = np.zeros(3)
        losses = []
        for _ in range(200):
            g = sum(linear_gradient(w, c) for c in ds.clients)
            w = w - 0.1 * g / len(ds.clients)
            losses.append(np.mean([linear_loss(w, c) for c in ds.clients]))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert np.allclose(w, ds.w_star, atol=1e-6)

    def test_logistic_labels_binary(self):
        ds = make_dataset("logistic", 2, 3, 40, seed=7)
        for c in ds.clients:
            assert set(np.unique(c.labels)) <= {0.0, 1.0}

    def test_uniform_features_bounded(self):
        ds = make_dataset(
            "linear", 2, 3, 40, feature_dist="uniform", feature_scale=2.0,
            seed=8,
        )
        for c in ds.clients:
            assert np.max(np.abs(c.features)) <= 2.0


class TestConfigFile:
    def test_round_trip_values(self):
        cfg = desk_config(collision_p=1e-9, latency_budget=1.5,
                          scenarios="recovery")
        assert loads_config(dumps_config(cfg)) == cfg

    def test_canonical_bytes_stable(self):
        text = dumps_config(desk_config())
        assert dumps_config(loads_config(text)) == text

    def test_comments_and_blank_lines_ignored(self):
        text = "# comment\n\nn_clients = 5\nm_tilde = 19 # trailing\n"
        cfg = loads_config(text)
        assert cfg.n_clients == 5
        assert cfg.m_tilde == 19

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            loads_config("frobnicate = 1\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValueError):
            loads_config("rounds = 1\nrounds = 2\n")

    def test_auto_fields(self):
        cfg = desk_config(masks_per_client="auto", seed_bits="auto")
        quant, k, q = cfg.resolve_protocol()
        assert k == int(np.ceil(cfg.dim * quant.m / 2))
        assert 1 <= q <= 256

    def test_validation_errors(self):
        with pytest.raises(ValueError):
            desk_config(transport="carrier-pigeon").validate()
        with pytest.raises(ValueError):
            desk_config(scenarios="nonsense").validate()
        with pytest.raises(ValueError):
            desk_config(n_clients=1).validate()


class TestRunTraining:
    def test_zero_eta_trajectories_identical(self):
        res = run_training(desk_config(eta=0.0), seed=1)
        assert res.records[-1]["final_winf_dist"] == 0.0

    def test_quantization_error_small_and_bounded(self):
        cfg = desk_config(rounds=10, m_tilde=16, fraction_bits=10)
        res = run_training(cfg, seed=2)
        for rec in res.records:
            if rec["record"] == "round":
                assert rec["winf_dist"] <= (rec["round"] + 1) * cfg.eta * 2**-10 * 2

    def test_deterministic_records(self):
        cfg = desk_config()
        a = run_training(cfg, seed=3)
        b = run_training(cfg, seed=3)
        assert a.records == b.records
        assert np.array_equal(a.final_w, b.final_w)

    def test_seed_changes_results(self):
        a = run_training(desk_config(), seed=3)
        b = run_training(desk_config(), seed=4)
        assert a.records != b.records

    def test_transport_equivalence(self):
        cfg = desk_config(rounds=2)
        res_in = run_training(cfg, seed=5)
        res_tcp = run_training(
            dataclasses.replace(cfg, transport="tcp-loopback"), seed=5
        )
        assert res_in.records == res_tcp.records
        assert [o.view for o in res_in.outcomes] == [
            o.view for o in res_tcp.outcomes
        ]

    def test_uplink_bytes_match_wire_format(self):
        # reference point: d=16, m=12, K=96, q=16 -> 806 bytes
        assert expected_uplink_bytes(16, 12, 96, 16) == 806
        cfg = desk_config(
            n_clients=4, dim=16, m_tilde=10, fraction_bits=0,
            masks_per_client=96, seed_bits=16, rounds=1,
        )
        quant, k, q = cfg.resolve_protocol()
        assert quant.m == 12
        res = run_training(cfg, seed=6)
        cost = next(r for r in res.records if r["record"] == "cost")
        assert cost["uplink_bytes_per_round"] == 806

    def test_dropout_voids_then_recovers(self):
        cfg = desk_config(
            n_clients=2, masks_per_client=1, rounds=2,
            drop_probability=0.5, retry_limit=60,
        )
        res = run_training(cfg, seed=8)
        voids = [r for r in res.records if r["record"] == "void"]
        rounds = [r for r in res.records if r["record"] == "round"]
        assert len(rounds) == 2
        assert voids, "expected at least one void attempt at 50% drop"
        for v in voids:
            assert v["missing_masked"] > 0 or v["missing_seeds"] > 0
            assert set(v) <= {
                "record", "round", "attempt", "missing_masked",
                "missing_seeds", "aborts", "abort_reason",
            }
        # completed rounds are still exact within the quantization bound
        for rec in rounds:
            assert rec["winf_dist"] <= (rec["round"] + 1) * cfg.eta * 2**-4 * 2

    def test_dropout_retries_exhausted_aborts(self):
        cfg = desk_config(drop_probability=1.0, retry_limit=2)
        with pytest.raises(TrainingAborted) as exc:
            run_training(cfg, seed=9)
        assert exc.value.result.abort_reason == "dropout retries exhausted"
        voids = [r for r in exc.value.result.records if r["record"] == "void"]
        assert len(voids) == 3  # initial + 2 retries

    def test_dp_enabled_run_completes(self):
        cfg = desk_config(
            dp_enabled=True, dp_epsilon=2.0, dp_delta=1e-3,
            dp_l2_sensitivity=1.0, dp_honest_clients=3,
            m_tilde=12, fraction_bits=4,
        )
        res = run_training(cfg, seed=10)
        assert res.records[-1]["record"] == "summary"

    def test_logistic_training_runs(self):
        res = run_training(desk_config(dataset="logistic"), seed=11)
        rounds = [r for r in res.records if r["record"] == "round"]
        assert rounds[-1]["loss_secgd"] < rounds[0]["loss_secgd"]


class TestEquivocation:
    def test_alternating_equivocator_detected_by_all(self):
        cfg = desk_config(server_mode="equivocate-alternate", retry_limit=0)
        with pytest.raises(TrainingAborted) as exc:
            run_training(cfg, seed=12)
        (void,) = [r for r in exc.value.result.records if r["record"] == "void"]
        assert void["aborts"] == cfg.n_clients
        assert void["abort_reason"] == "EquivocationError"
        assert void["missing_masked"] == cfg.n_clients

    def test_victim_mode_detected_by_victim(self):
        cfg = desk_config(server_mode="equivocate-victim", retry_limit=0)
        with pytest.raises(TrainingAborted) as exc:
            run_training(cfg, seed=13)
        (void,) = [r for r in exc.value.result.records if r["record"] == "void"]
        assert void["aborts"] == 1

    def test_no_partial_sum_in_abort_artifacts(self):
        cfg = desk_config(server_mode="equivocate-alternate", retry_limit=0)
        with pytest.raises(TrainingAborted) as exc:
            run_training(cfg, seed=14)
        for rec in exc.value.result.records:
            assert "aggregate" not in rec
            assert not any(isinstance(v, (list, np.ndarray)) for v in rec.values())


def test_recovery_scenario_records_hits():
    cfg = desk_config(
        n_clients=2, dim=2, m_tilde=3, fraction_bits=0,
        masks_per_client=2, seed_bits=16, rounds=1,
        scenarios="recovery",
    )
    res = run_training(cfg, seed=15)
    (round_rec,) = [r for r in res.records if r["record"] == "round"]
    assert round_rec["recovery_hits"] == [True, True]


def test_round_void_exception_shape():
    err = RoundVoid(missing_masked=1, missing_seeds=3)
    assert err.missing_masked == 1 and err.missing_seeds == 3
