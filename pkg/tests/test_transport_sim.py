import numpy as np
import pytest

from collectium.collectives import allreduce_ring
from collectium.core import GroupSpec, ReduceOp, Tensor
from collectium.errors import DeadlockError, RoutingError
from collectium.simcost import CostModel, predict_allreduce_time
from collectium.transport.sim import LinkModel, SimNetwork

from conftest import run_group


class TestLinkModel:
    def test_cost(self):
        assert LinkModel(1e-6, 1e-9).cost(1000) == pytest.approx(2.0e-6)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LinkModel(-1.0, 0.0)


class TestSendRecv:
    def test_loopback_identical_bytes(self):
        payload = bytes(range(64))

        def program(rank, tp):
            if rank == 0:
                tp.send(1, 7, payload)
                return None
            return tp.recv(0, 7)

        results, _ = run_group(2, program)
        assert results[1] == payload

    def test_link_busy_virtual_time(self):
        def program(rank, tp):
            if rank == 0:
                tp.send(1, 0, b"\x00" * 1000)
                return tp.virtual_time()
            tp.recv(0, 0)
            return tp.virtual_time()

        results, _ = run_group(2, program, link=LinkModel(1e-6, 1e-9))
        assert results[0] == pytest.approx(2.0e-6)
        assert results[1] == pytest.approx(2.0e-6)

    def test_send_out_of_range(self):
        def program(rank, tp):
            if rank == 0:
                tp.send(2, 0, b"x")  # rank p is out of range

        with pytest.raises(RoutingError):
            run_group(2, program)

    def test_self_send_rejected(self):
        def program(rank, tp):
            tp.send(rank, 0, b"x")

        with pytest.raises(RoutingError):
            run_group(2, program)

    def test_fifo_per_channel(self):
        def program(rank, tp):
            if rank == 0:
                tp.send(1, 1, b"A")
                tp.send(1, 1, b"B")
                return None
            return [tp.recv(0, 1), tp.recv(0, 1)]

        results, _ = run_group(2, program)
        assert results[1] == [b"A", b"B"]

    def test_recv_before_send_completes_at_delivery_time(self):
        def program(rank, tp):
            if rank == 0:
                # rank 0 is scheduled first, so this recv blocks on an empty
                # mailbox until rank 1's send
                tp.recv(1, 0)
                return tp.virtual_time()
            tp.advance(5e-6)
            tp.send(0, 0, b"\x00" * 1000)
            return tp.virtual_time()

        results, _ = run_group(2, program, link=LinkModel(1e-6, 1e-9))
        # delivery = send start (5e-6) + cost (2e-6)
        assert results[0] == pytest.approx(7e-6)

    def test_deadlock_lists_blocked_ranks(self):
        def program(rank, tp):
            tp.recv((rank + 1) % 4, 0)

        with pytest.raises(DeadlockError) as exc_info:
            run_group(4, program)
        assert exc_info.value.blocked_ranks == (0, 1, 2, 3)


class TestVirtualTime:
    def test_starts_at_zero(self):
        net = SimNetwork(2)
        assert all(ep.virtual_time() == 0.0 for ep in net.endpoints)

    def test_advance_rejects_negative(self):
        net = SimNetwork(1)
        with pytest.raises(ValueError):
            net.endpoints[0].advance(-1.0)

    def test_ring_allreduce_matches_analytic(self):
        m = CostModel(alpha=1e-6, beta=1e-9, gamma=5e-10)
        group = GroupSpec(4)

        def program(rank, tp):
            t = Tensor("x", "float64", np.full(400, float(rank)))
            allreduce_ring(t, ReduceOp.SUM, group, tp)
            return tp.virtual_time()

        results, net = run_group(4, program, link=LinkModel(m.alpha, m.beta),
                                 gamma=m.gamma)
        predicted = predict_allreduce_time("ring_rsa", 3200, 4, m)
        assert max(results) == pytest.approx(predicted, rel=1e-12)
        assert net.max_virtual_time() == max(results)


class TestDeterminismAndConservation:
    @staticmethod
    def _program(rank, tp):
        t = Tensor("x", "float64", np.arange(37) * (rank + 1.0))
        out, _ = allreduce_ring(t, ReduceOp.SUM, GroupSpec(tp.size), tp)
        return out.to_bytes()

    def test_identical_runs_identical_event_logs(self):
        results_a, net_a = run_group(5, self._program,
                                     link=LinkModel(1e-6, 1e-9))
        results_b, net_b = run_group(5, self._program,
                                     link=LinkModel(1e-6, 1e-9))
        assert results_a == results_b
        assert net_a.event_log.events == net_b.event_log.events

    def test_byte_conservation(self):
        _, net = run_group(5, self._program)
        log = net.event_log
        assert log.total_messages_sent() == log.total_messages_received()
        assert log.total_bytes_sent() == log.total_bytes_received()


class TestNodeMap:
    def test_intra_inter_link_override(self):
        # ranks 0,1 on node 0 and rank 2 on node 1: the slow inter-node link
        # only applies to the cross-node pair
        net = SimNetwork(3, link=LinkModel(1.0, 0.0),
                         node_map={0: 0, 1: 0, 2: 1},
                         intra_link=LinkModel(1e-6, 0.0),
                         inter_link=LinkModel(1e-3, 0.0))
        assert net.link_for(0, 1).alpha == 1e-6
        assert net.link_for(0, 2).alpha == 1e-3
        assert net.link_for(2, 1).alpha == 1e-3

    def test_default_link_without_node_map(self):
        net = SimNetwork(2, link=LinkModel(2e-6, 0.0))
        assert net.link_for(0, 1).alpha == 2e-6
