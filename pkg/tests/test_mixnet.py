from collections import Counter

import numpy as np
import pytest

from secgd.messages import (
    MSG_MASKED_GRADIENT,
    MSG_NOISE_SEED,
    MSG_PARAM_REQUEST,
    RoundMessage,
)
from secgd.mixnet import (
    AnonymousChannel,
    InProcessTransport,
    LatencyModel,
    Mixnet,
    TcpLoopbackTransport,
)


def make_mixnet(sink, seed=0, **kw):
    return Mixnet(
        rng=np.random.default_rng(seed),
        deliver_cb=lambda msg, t: sink.append((t, msg)),
        **kw,
    )


def seed_msg(value, rnd=0):
    return RoundMessage(MSG_NOISE_SEED, rnd, bytes([value]))


class TestDeliveryModel:
    def test_identical_payloads_form_a_multiset(self):
        sink = []
        net = make_mixnet(sink)
        net.open_round(0, 10.0)
        net.submit(seed_msg(7), 1.0)
        net.submit(seed_msg(7), 2.0)
        view = net.close_round()
        assert Counter(view.seed_multiset) == Counter({bytes([7]): 2})

    def test_view_counts(self):
        sink = []
        net = make_mixnet(sink)
        net.open_round(0, 10.0)
        n, k = 4, 2
        for _ in range(n):
            net.submit(RoundMessage(MSG_MASKED_GRADIENT, 0, b"\x01"), 0.5)
            for j in range(k):
                net.submit(seed_msg(j), 0.5)
        view = net.close_round()
        assert len(view.masked_multiset) == n
        assert len(view.seed_multiset) == n * k
        assert len(view.arrival_times) == n * (k + 1)

    def test_drop_probability_one_drops_everything(self):
        sink = []
        net = make_mixnet(sink, drop_probability=1.0)
        net.open_round(0, 10.0)
        for v in range(5):
            net.submit(seed_msg(v), 0.1)
        view = net.close_round()
        assert view.seed_multiset == ()
        assert sink == []

    def test_arrivals_sorted_and_jittered(self):
        sink = []
        net = make_mixnet(sink, latency=LatencyModel("uniform", 2.0))
        net.open_round(0, 10.0)
        for v in range(20):
            net.submit(seed_msg(v), float(v % 10))
        view = net.close_round()
        times = [t for t, _ in view.arrival_times]
        assert times == sorted(times)
        sends = {float(v % 10) for v in range(20)}
        assert any(t not in sends for t in times)  # jitter moved something

    def test_late_arrivals_discarded_by_budget(self):
        sink = []
        net = make_mixnet(
            sink,
            latency=LatencyModel("uniform", 100.0),
            latency_budget=0.0,
        )
        net.open_round(0, 1.0)
        net.submit(seed_msg(1), 0.99)
        view = net.close_round()
        assert view.seed_multiset == ()

    def test_equal_times_order_randomized_by_seed(self):
        def run(seed):
            sink = []
            net = make_mixnet(sink, seed=seed)
            net.open_round(0, 10.0)
            for v in range(8):
                net.submit(seed_msg(v), 5.0)
            net.close_round()
            return [m.payload for _, m in sink]

        assert run(1) == run(1)  # deterministic
        assert run(1) != run(2)  # but seed-dependent

    def test_submit_validation(self):
        net = make_mixnet([])
        net.open_round(3, 10.0)
        with pytest.raises(ValueError):
            net.submit(seed_msg(0, rnd=2), 1.0)  # wrong round
        with pytest.raises(ValueError):
            net.submit(seed_msg(0, rnd=3), 10.0)  # outside window
        with pytest.raises(ValueError):
            net.submit(RoundMessage(MSG_PARAM_REQUEST, 3), 1.0)

    def test_tap_round_bookkeeping(self):
        net = make_mixnet([])
        net.open_round(0, 1.0)
        view = net.close_round()
        assert net.tap(0) == view
        assert view.masked_multiset == () and view.seed_multiset == ()
        with pytest.raises(ValueError):
            net.tap(1)


class TestTransports:
    def test_in_process_round_trips_bytes(self):
        msg = RoundMessage(MSG_NOISE_SEED, 9, b"\xde\xad")
        assert InProcessTransport().deliver(msg.to_bytes()) == msg

    def test_tcp_loopback_bit_exact(self):
        transport = TcpLoopbackTransport()
        try:
            payloads = [bytes([i, 255 - i]) for i in range(20)]
            for p in payloads:
                msg = RoundMessage(MSG_NOISE_SEED, 1, p)
                got = transport.deliver(msg.to_bytes())
                assert got == msg
                assert got.payload == p
        finally:
            transport.close()

    def test_transports_produce_identical_views(self):
        def run(transport):
            sink = []
            net = Mixnet(
                rng=np.random.default_rng(42),
                deliver_cb=lambda msg, t: sink.append((t, msg)),
                latency=LatencyModel("uniform", 1.0),
                transport=transport,
            )
            net.open_round(0, 10.0)
            for v in range(12):
                net.submit(seed_msg(v), float(v) / 2)
            view = net.close_round()
            net.close()
            return view, sink

        view_a, sink_a = run(InProcessTransport())
        view_b, sink_b = run(TcpLoopbackTransport())
        assert view_a == view_b
        assert sink_a == sink_b


class TestAnonymousChannel:
    def test_handler_sees_no_identity(self):
        seen = []

        def handler(msg):
            seen.append(msg)
            return b"ok"

        chan = AnonymousChannel(handler)
        assert chan.request(RoundMessage(MSG_PARAM_REQUEST, 2)) == b"ok"
        (msg,) = seen
        assert msg == RoundMessage(MSG_PARAM_REQUEST, 2)
