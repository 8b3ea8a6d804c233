import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsaga.cluster import (
    ClusterConfig,
    NodeState,
    SyncMessage,
    dsaga_step,
    local_gradient_pass,
    node_quadratic,
    run_dsaga,
    run_inner_round,
    synchronize,
)
from dsaga.data import Shard, partition
from dsaga.losses import LinearPerturbation
from dsaga.saga import init_saga, run_saga, saga_step
from conftest import (
    make_logistic_problem,
    make_lstsq_problem,
    two_node_scalar_shards,
)


def make_node(obj, shard, w0, seed=0, step=0.05):
    inner = init_saga(obj, shard, w0, step_rule=step, seed=seed, node_id=shard.node_id)
    return NodeState(shard.node_id, shard, inner, inner.w)


class TestSynchronize:
    def test_identical_messages(self):
        msgs = [
            SyncMessage(i, np.array([1.0, 2.0]), np.array([0.5, 0.5])) for i in range(3)
        ]
        w, g = synchronize(msgs)
        assert np.array_equal(w, [1.0, 2.0])
        assert np.array_equal(g, [0.5, 0.5])

    def test_plain_average(self):
        msgs = [
            SyncMessage(0, np.array([0.0, 0.0]), np.array([1.0, -1.0])),
            SyncMessage(1, np.array([2.0, 4.0]), np.array([-1.0, 1.0])),
        ]
        w, g = synchronize(msgs)
        assert np.array_equal(w, [1.0, 2.0])
        assert np.array_equal(g, [0.0, 0.0])

    def test_duplicate_node_rejected(self):
        msgs = [SyncMessage(0, np.zeros(1), np.zeros(1))] * 2
        with pytest.raises(ValueError):
            synchronize(msgs)

    def test_missing_node_rejected(self):
        msgs = [
            SyncMessage(0, np.zeros(1), np.zeros(1)),
            SyncMessage(2, np.zeros(1), np.zeros(1)),
        ]
        with pytest.raises(ValueError):
            synchronize(msgs)

    def test_order_independent(self):
        msgs = [
            SyncMessage(1, np.array([2.0]), np.array([3.0])),
            SyncMessage(0, np.array([0.0]), np.array([1.0])),
        ]
        w, g = synchronize(msgs)
        assert np.array_equal(w, [1.0])
        assert np.array_equal(g, [2.0])

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(1, 6),
        st.integers(1, 5),
        st.integers(0, 2 ** 31 - 1),
    )
    def test_averages_are_coordinatewise(self, k, d, seed):
        rng = np.random.default_rng(seed)
        params = rng.standard_normal((k, d))
        grads = rng.standard_normal((k, d))
        msgs = [SyncMessage(i, params[i], grads[i]) for i in range(k)]
        w, g = synchronize(msgs)
        assert np.allclose(w, params.mean(axis=0))
        assert np.allclose(g, grads.mean(axis=0))


class TestLocalGradientPass:
    def test_anchor_is_exact_gradient(self):
        obj, data = make_logistic_problem(n=30, d=4)
        shard = Shard(0, data.examples, data.dimension)
        node = make_node(obj, shard, np.full(4, 0.2))
        local_gradient_pass(node, obj)
        assert np.array_equal(node.anchor_grad, obj.full_gradient(shard, node.w))

    def test_refresh_makes_estimate_exact(self):
        obj, data = make_logistic_problem(n=30, d=4, lam=0.1)
        shard = Shard(0, data.examples, data.dimension)
        node = make_node(obj, shard, np.zeros(4))
        # stale the memory first
        run_saga(node.inner, obj, shard, 2, trace_every=0)
        node.w = node.inner.w
        local_gradient_pass(node, obj, refresh=True)
        estimate = node.inner.grad_sum / shard.count + obj.lam * node.w
        assert estimate == pytest.approx(node.anchor_grad, abs=1e-12)

    def test_anchor_zero_at_local_optimum(self):
        obj, data = make_lstsq_problem(n=20, d=3, lam=0.2, seed=6)
        shard = Shard(0, data.examples, data.dimension)
        _, center, _ = node_quadratic(obj, shard)
        node = make_node(obj, shard, center)
        local_gradient_pass(node, obj)
        assert np.linalg.norm(node.anchor_grad) < 1e-10


class TestDsagaStep:
    def test_requires_pass(self):
        obj, data = make_logistic_problem(n=10, d=3)
        shard = Shard(0, data.examples, data.dimension)
        node = make_node(obj, shard, np.zeros(3))
        with pytest.raises(RuntimeError):
            dsaga_step(node, obj, j=0)

    def test_zero_correction_equals_saga_step(self):
        obj, data = make_logistic_problem(n=12, d=3, lam=0.05)
        shard = Shard(0, data.examples, data.dimension)
        node = make_node(obj, shard, np.zeros(3), seed=2)
        local_gradient_pass(node, obj, refresh=False)
        node.correction = None
        twin = init_saga(obj, shard, np.zeros(3), step_rule=0.05, seed=2, node_id=0)
        for j in (3, 1, 4, 1):
            dsaga_step(node, obj, j=j)
            saga_step(twin, obj, shard, j=j)
            assert np.array_equal(node.inner.w, twin.w)

    def test_step_equals_saga_on_shifted_objective(self, rng):
        # the corrected update is exactly a SAGA step on the objective with
        # the round's linear term added, for every sample index
        obj, data = make_logistic_problem(n=5, d=4, lam=0.1)
        shard = Shard(0, data.examples, data.dimension)
        w0 = rng.standard_normal(4)
        corr = rng.standard_normal(4)
        for j in range(5):
            node = make_node(obj, shard, w0, seed=3)
            local_gradient_pass(node, obj, refresh=False)
            node.correction = corr.copy()
            dsaga_step(node, obj, j=j)

            twin = init_saga(obj, shard, w0, step_rule=0.05, seed=3, node_id=0)
            surrogate = LinearPerturbation(obj, corr.copy(), w0)
            saga_step(twin, surrogate, shard, j=j)
            assert np.array_equal(node.inner.w, twin.w)


class TestInnerRound:
    def test_exact_single_node_jumps_to_optimum(self):
        obj, data = make_lstsq_problem(n=40, d=3, lam=0.1, seed=7)
        shard = Shard(0, data.examples, data.dimension)
        node = NodeState(0, shard, None, np.zeros(3))
        local_gradient_pass(node, obj)
        node.global_avg_grad = node.anchor_grad
        run_inner_round(node, obj, exact=True)
        _, center, _ = node_quadratic(obj, shard)
        assert node.w == pytest.approx(center, abs=1e-12)

    def test_exact_rejects_logistic(self):
        obj, data = make_logistic_problem(n=10, d=3)
        shard = Shard(0, data.examples, data.dimension)
        node = NodeState(0, shard, None, np.zeros(3))
        node.anchor_grad = obj.full_gradient(shard, node.w)
        node.global_avg_grad = node.anchor_grad
        node.pass_done = True
        with pytest.raises(ValueError):
            run_inner_round(node, obj, exact=True)

    def test_iterative_approaches_exact(self):
        # well-conditioned quadratic: 50 local passes land within 1e-4 of
        # the closed-form inner optimum
        obj, data = make_lstsq_problem(n=200, d=4, lam=0.3, seed=8)
        shards = partition(data, 2, seed=1)
        shard = shards[0]
        w0 = np.full(4, 0.5)
        corr = np.array([0.01, -0.02, 0.005, 0.0])

        node = make_node(obj, shard, w0, seed=4, step="auto")
        node.inner.step = 1.0 / (3.0 * obj.smoothness(shard)[0])
        local_gradient_pass(node, obj)
        node.correction = corr
        run_inner_round(node, obj, passes=50)

        h, center, factor = node_quadratic(obj, shard)
        from scipy.linalg import cho_solve

        exact = center - cho_solve(factor, corr)
        assert np.linalg.norm(node.w - exact) <= 1e-4

    def test_fixed_point_identity(self):
        # at the inner optimum the local gradient equals anchor - global avg
        obj, data = make_lstsq_problem(n=60, d=3, lam=0.2, seed=9)
        shard = Shard(0, data.examples, data.dimension)
        node = NodeState(0, shard, None, np.full(3, 0.3))
        local_gradient_pass(node, obj)
        g_avg = node.anchor_grad + np.array([0.05, -0.01, 0.02])
        node.global_avg_grad = g_avg
        run_inner_round(node, obj, exact=True)
        residual = obj.full_gradient(shard, node.w) - (node.anchor_grad - g_avg)
        assert np.linalg.norm(residual) <= 1e-10


class TestRunDsaga:
    def test_k1_reduction_bit_exact(self):
        obj, data = make_logistic_problem(n=120, d=5, lam=0.02, seed=5)
        shard = partition(data, 1, seed=3)[0]
        state = init_saga(obj, shard, np.zeros(5), seed=3, node_id=0)
        _, saga_records = run_saga(state, obj, shard, 6)
        saga_ws = {r.pass_opt: r.w for r in saga_records}

        config = ClusterConfig(nodes=1, local_passes=2, rounds=3, seed=3)
        _, records = run_dsaga(obj, [shard], config, np.zeros(5))
        compared = 0
        for r in records:
            if r.node == 0 and r.w is not None and r.inner_pass is not None:
                assert np.array_equal(r.w, saga_ws[r.pass_opt])
                compared += 1
        assert compared == 6

    def test_hand_example_two_rounds(self):
        shards = two_node_scalar_shards()
        from dsaga.losses import LeastSquaresLoss

        obj = LeastSquaresLoss(0.0)
        config = ClusterConfig(nodes=2, local_passes=1, rounds=2, seed=0, exact_inner=True)
        _, records = run_dsaga(obj, shards, config, np.zeros(1))
        ends = {}
        for r in records:
            if isinstance(r.node, int) and r.anchor_grad is not None:
                ends.setdefault(r.round, {})[r.node] = float(r.w[0])
        assert ends[0][0] - 2.0 == pytest.approx(1.0, abs=1e-10)
        assert ends[0][1] - 2.0 == pytest.approx(-0.5, abs=1e-10)
        assert ends[1][0] - 2.0 == pytest.approx(0.25, abs=1e-10)
        assert ends[1][1] - 2.0 == pytest.approx(0.25, abs=1e-10)

    def test_explicit_quadratic_cluster_exact(self):
        # every node carries the same explicit quadratic, so the pairwise
        # contraction is zero and one round reaches the center
        from conftest import placeholder_dataset, random_quadratic

        obj = random_quadratic(4, seed=12)
        data = placeholder_dataset(30, 4)
        shards = partition(data, 3, seed=0)
        config = ClusterConfig(nodes=3, local_passes=1, rounds=1, seed=0,
                               exact_inner=True)
        w_final, _ = run_dsaga(obj, shards, config, np.ones(4))
        assert np.linalg.norm(w_final - obj.center) <= 1e-12

    def test_identical_shards_converge_in_one_round(self):
        obj, data = make_lstsq_problem(n=50, d=4, lam=0.1, seed=10)
        base = Shard(0, data.examples, data.dimension)
        shards = [Shard(k, data.examples, data.dimension) for k in range(3)]
        config = ClusterConfig(nodes=3, local_passes=1, rounds=1, seed=0, exact_inner=True)
        w_final, _ = run_dsaga(obj, shards, config, np.zeros(4))
        _, center, _ = node_quadratic(obj, base)
        assert np.linalg.norm(w_final - center) <= 1e-10

    def test_identical_shards_and_seeds_symmetry(self):
        obj, data = make_logistic_problem(n=60, d=4, lam=0.05, seed=11)
        shards = [Shard(k, data.examples, data.dimension) for k in range(3)]
        config = ClusterConfig(nodes=3, local_passes=2, rounds=2, seed=5)
        _, records = run_dsaga(obj, shards, config, np.zeros(4))
        # same shard + same node sampling would differ; instead check the
        # correction vanishes by symmetry (equal anchors)
        for r in records:
            if r.node == "avg" and r.round == 0 and r.inner_pass == 0:
                assert r.grad_norm == pytest.approx(
                    float(np.linalg.norm(obj.full_gradient(shards[0], np.zeros(4)))),
                    rel=1e-12,
                )

    def test_serial_and_parallel_traces_identical(self, monkeypatch):
        obj, data = make_logistic_problem(n=80, d=4, lam=0.05, seed=13)
        shards = partition(data, 4, seed=2)
        config = ClusterConfig(nodes=4, local_passes=2, rounds=2, seed=2)

        monkeypatch.setenv("DSAGA_THREADS", "1")
        _, serial = run_dsaga(obj, shards, config, np.zeros(4))
        monkeypatch.setenv("DSAGA_THREADS", "4")
        _, parallel = run_dsaga(obj, shards, config, np.zeros(4))

        assert len(serial) == len(parallel)
        for a, b in zip(serial, parallel):
            assert a.node == b.node and a.round == b.round
            assert a.f == b.f
            if a.w is not None:
                assert np.array_equal(a.w, b.w)

    def test_round_pass_accounting(self):
        obj, data = make_logistic_problem(n=40, d=3, seed=14)
        shards = partition(data, 2, seed=1)
        config = ClusterConfig(nodes=2, local_passes=3, rounds=2, seed=1)
        _, records = run_dsaga(obj, shards, config, np.zeros(3))
        ends = [r for r in records if isinstance(r.node, int) and r.anchor_grad is not None]
        for r in ends:
            assert r.pass_opt == (r.round + 1) * 3
            assert r.pass_total == (r.round + 1) * 4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ClusterConfig(nodes=0)
        obj, data = make_logistic_problem(n=20, d=3)
        shards = partition(data, 2, seed=0)
        with pytest.raises(ValueError):
            run_dsaga(obj, shards, ClusterConfig(nodes=3), np.zeros(3))
