"""Distributed SAGA and its bulk-synchronous cluster simulator.

Each of K nodes owns one shard and runs a corrected SAGA inner loop: every
update carries the constant ``global_avg_grad - anchor_grad``, where the
anchor is the node's exact local gradient recomputed at the round's common
starting point (the local gradient pass, charged as one data pass) and
``global_avg_grad`` averages the gradient estimates every node sent at the
last synchronization. At a round barrier nodes exchange one SyncMessage
(parameters plus gradient estimate), restart from the parameter average,
and repeat. A round therefore costs ``local_passes + 1`` data passes.

With a single node the correction cancels, so the scheme reduces to plain
SAGA; the reduction here is exact to the bit: for K = 1 the correction is
skipped outright (the freshly computed anchor is the node's own gradient
estimate at the synchronization point, so their difference is identically
zero) and the memory refresh of the local gradient pass is suppressed.

Node inner loops may run concurrently; each node samples from its own
persistent seeded stream, so traces are bit-identical regardless of
execution order. ``DSAGA_THREADS`` caps the simulator's thread count
(default: one thread per node).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import Dataset, Shard
from .losses import split_perturbation
from .records import TraceRecord
from .saga import (
    GRAD_SUM_REFRESH_PASSES,
    SagaState,
    init_saga,
    rebuild_grad_sum,
    refresh_memory,
    run_steps,
)

__all__ = [
    "ClusterConfig",
    "SyncMessage",
    "NodeState",
    "local_gradient_pass",
    "dsaga_step",
    "run_inner_round",
    "synchronize",
    "run_dsaga",
]


@dataclass
class ClusterConfig:
    """Simulator shape: K nodes, U local passes per round, T rounds."""

    nodes: int
    local_passes: int = 1
    rounds: int = 1
    seed: int = 0
    step_rule: float | str = "auto"
    exact_inner: bool = False
    refresh_memory: bool = True
    record_inner: bool = True

    def __post_init__(self):
        if self.nodes < 1 or self.local_passes < 1 or self.rounds < 1:
            raise ValueError("nodes, local_passes and rounds must all be >= 1")


@dataclass
class SyncMessage:
    """The only data crossing node boundaries: end-of-round parameters and
    the node's gradient estimate there. Size is independent of shard size."""

    node_id: int
    params: np.ndarray
    grad_estimate: np.ndarray


@dataclass
class NodeState:
    """One node: its shard, inner SAGA state (None in exact mode) and the
    per-round correction ingredients."""

    node_id: int
    shard: Shard
    inner: SagaState | None
    w: np.ndarray
    anchor_grad: np.ndarray | None = None
    global_avg_grad: np.ndarray | None = None
    correction: np.ndarray | None = None
    pass_done: bool = False
    hessian: np.ndarray | None = None
    center: np.ndarray | None = None
    factor: tuple | None = None


def node_quadratic(obj, shard):
    """Node-local quadratic model (1/N_k normalization): Hessian, minimizer
    and a Cholesky factor for the exact inner solve."""
    base, _ = split_perturbation(obj)
    kind = getattr(base, "kind", None)
    if kind == "quadratic":
        h = base.matrix
        center = base.center
    elif kind == "lstsq":
        x = shard.dense_matrix()
        if x is None:
            raise ValueError("shard too large for an exact inner solve")
        h = x.T @ x / shard.count
        if base.lam:
            h = h + base.lam * np.eye(shard.dimension)
        b = x.T @ shard.labels() / shard.count
        center = None  # solved below once the factor exists
    else:
        raise ValueError("exact inner solve requires a quadratic objective")
    try:
        factor = cho_factor(h)
    except np.linalg.LinAlgError:
        raise ValueError(f"node {shard.node_id}: singular local Hessian") from None
    if center is None:
        center = cho_solve(factor, b)
    return h, center, factor


def local_gradient_pass(node, obj, refresh=True):
    """Recompute the node's exact gradient at its current point.

    Sets the anchor and, when ``refresh`` is on, rewrites every memory cell
    to the gradient at this point in the same sweep, which makes the node's
    stored-gradient average exact at the round start. Counts as one data
    pass in the caller's accounting.
    """
    node.anchor_grad = obj.full_gradient(node.shard, node.w)
    if refresh and node.inner is not None:
        refresh_memory(node.inner, obj, node.shard, at_w=node.w)
    node.pass_done = True
    return node


def dsaga_step(node, obj, j=None):
    """One corrected SAGA step on the node's shard.

    Identical to a plain SAGA step on the objective shifted by the linear
    term ``correction . (w - w_start)``; with one node the correction is
    absent and the step is exactly SAGA's.
    """
    if not node.pass_done:
        raise RuntimeError("local gradient pass has not run this round")
    if j is None:
        j = int(node.inner.rng.integers(0, node.shard.count))
    run_steps(node.inner, obj, node.shard, [j], node.correction)
    node.w = node.inner.w
    return node


def run_inner_round(node, obj, passes=None, exact=False, collect=None):
    """Run one inner round to its end-of-round point.

    Iterative mode performs ``passes`` local epochs of corrected SAGA steps
    (``collect`` receives a parameter snapshot after each pass). Exact mode,
    quadratic objectives only, jumps straight to the stationary point of the
    corrected local objective: ``w = w_start - H_k^{-1} global_avg_grad``.
    """
    if not node.pass_done:
        raise RuntimeError("local gradient pass has not run this round")
    if exact:
        if node.factor is None:
            node.hessian, node.center, node.factor = node_quadratic(obj, node.shard)
        node.w = node.w - cho_solve(node.factor, node.global_avg_grad)
        return node
    if passes is None or passes < 1:
        raise ValueError("iterative mode needs passes >= 1")
    n_k = node.shard.count
    for _ in range(passes):
        js = node.inner.rng.integers(0, n_k, size=n_k)
        run_steps(node.inner, obj, node.shard, js, node.correction)
        node.inner.passes_done += 1
        if node.inner.passes_done % GRAD_SUM_REFRESH_PASSES == 0:
            rebuild_grad_sum(node.inner, obj, node.shard)
        node.w = node.inner.w
        if collect is not None:
            collect(node.w.copy())
    return node


def node_message(node, obj):
    """The node's outgoing SyncMessage.

    In exact mode the estimate is the exact gradient at the end point
    (``anchor - global_avg_grad`` by the fixed-point identity); iteratively
    it is the node-local average of the stored gradients plus the dense
    regularizer term at the end point.
    """
    if node.inner is None:
        g_hat = node.anchor_grad - node.global_avg_grad
    else:
        g_hat = node.inner.grad_sum / node.shard.count
        lam = obj.lam
        if lam:
            g_hat = g_hat + lam * node.w
    return SyncMessage(node.node_id, node.w.copy(), np.asarray(g_hat, dtype=np.float64))


def synchronize(messages):
    """Average the K messages into the common restart point and gradient
    average. Every node receives the same pair."""
    if not messages:
        raise ValueError("no messages to synchronize")
    ids = [m.node_id for m in messages]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node_id in synchronization")
    if sorted(ids) != list(range(len(ids))):
        raise ValueError("missing node_id in synchronization")
    order = np.argsort(ids)
    params = np.stack([messages[i].params for i in order])
    grads = np.stack([messages[i].grad_estimate for i in order])
    return params.mean(axis=0), grads.mean(axis=0)


def _thread_count(k):
    raw = os.environ.get("DSAGA_THREADS")
    if raw is None:
        return k
    threads = int(raw)
    if threads < 1:
        raise ValueError("DSAGA_THREADS must be >= 1")
    return min(threads, k)


def _map_nodes(fn, nodes, threads):
    if threads <= 1 or len(nodes) == 1:
        return [fn(node) for node in nodes]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, node) for node in nodes]
        return [f.result() for f in futures]


def run_dsaga(obj, shards, config, w0):
    """Run T synchronization rounds over the given shards.

    Round 0 bootstraps the gradient average from the local gradient passes
    at ``w0`` (all nodes start there, so the fresh anchors are the gradient
    estimates at the last common point). Returns the final averaged
    parameters and the trace: one averaged record per round boundary, one
    record per node per local pass (iterative mode) and one end-of-round
    record per node carrying the anchor and the sent gradient estimate.
    """
    if len(shards) != config.nodes:
        raise ValueError("config.nodes must match the number of shards")
    k = config.nodes
    u_passes = config.local_passes
    dim = shards[0].dimension
    w0 = np.asarray(w0, dtype=np.float64)
    if w0.size != dim:
        raise ValueError("dimension mismatch between w0 and shards")
    threads = _thread_count(k)

    nodes = []
    for node_id, shard in enumerate(shards):
        if shard.dimension != dim:
            raise ValueError("shards disagree on dimension")
        if config.exact_inner:
            h, center, factor = node_quadratic(obj, shard)
            nodes.append(
                NodeState(node_id, shard, None, w0.copy(), hessian=h, center=center, factor=factor)
            )
        else:
            inner = init_saga(obj, shard, w0, config.step_rule, config.seed, node_id=node_id)
            nodes.append(NodeState(node_id, shard, inner, inner.w))

    merged = Dataset([ex for s in shards for ex in s.examples], dim)
    # Memory refresh and the correction are both disabled at K = 1 so the
    # trajectory is bit-identical to plain SAGA.
    refresh = config.refresh_memory and k > 1 and not config.exact_inner

    records = []
    w_start = w0.copy()
    global_avg = None

    for t in range(config.rounds):
        def pass_task(node):
            node.pass_done = False
            node.w = w_start.copy()
            if node.inner is not None:
                node.inner.w = node.w
            local_gradient_pass(node, obj, refresh=refresh)
            return node.anchor_grad

        anchors = _map_nodes(pass_task, nodes, threads)
        grad_at_start = np.mean(np.stack(anchors), axis=0)
        if t == 0:
            global_avg = grad_at_start
        g_used = anchors[0] if k == 1 else global_avg
        for node in nodes:
            node.global_avg_grad = g_used
            node.correction = None if k == 1 else g_used - node.anchor_grad

        records.append(
            TraceRecord(
                algo="dsaga",
                node="avg",
                round=t,
                inner_pass=0,
                pass_opt=t * u_passes,
                pass_total=t * (u_passes + 1) + 1,
                f=obj.value(merged, w_start),
                grad_norm=float(np.linalg.norm(grad_at_start)),
                w=w_start.copy(),
                global_avg_grad=np.array(g_used),
            )
        )

        def inner_task(node):
            snaps = []
            if config.exact_inner:
                run_inner_round(node, obj, exact=True)
            else:
                collect = snaps.append if config.record_inner else None
                run_inner_round(node, obj, passes=u_passes, collect=collect)
            return snaps, node_message(node, obj)

        results = _map_nodes(inner_task, nodes, threads)

        for node_id, (snaps, msg) in enumerate(results):
            node = nodes[node_id]
            for u, w_snap in enumerate(snaps[:-1], start=1):
                records.append(
                    TraceRecord(
                        algo="dsaga",
                        node=node_id,
                        round=t,
                        inner_pass=u,
                        pass_opt=t * u_passes + u,
                        pass_total=t * (u_passes + 1) + 1 + u,
                        f=obj.value(merged, w_snap),
                        w=w_snap,
                    )
                )
            records.append(
                TraceRecord(
                    algo="dsaga",
                    node=node_id,
                    round=t,
                    inner_pass=u_passes if not config.exact_inner else None,
                    pass_opt=(t + 1) * u_passes,
                    pass_total=(t + 1) * (u_passes + 1),
                    f=obj.value(merged, node.w),
                    grad_norm=float(np.linalg.norm(msg.grad_estimate)),
                    w=node.w.copy(),
                    anchor_grad=np.array(node.anchor_grad),
                    grad_estimate=msg.grad_estimate.copy(),
                )
            )
        w_start, global_avg = synchronize([msg for _, msg in results])

    records.append(
        TraceRecord(
            algo="dsaga",
            node="avg",
            round=config.rounds,
            inner_pass=0,
            pass_opt=config.rounds * u_passes,
            pass_total=config.rounds * (u_passes + 1),
            f=obj.value(merged, w_start),
            w=w_start.copy(),
        )
    )
    return w_start, records
