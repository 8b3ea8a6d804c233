"""Single-machine SAGA with stored-gradient memory.

Each step samples one example, replaces its memory cell with the gradient
at the current point and moves against the sampled difference plus the
running memory average. The same step kernel doubles as the inner loop of
the distributed variant: an optional constant correction vector is added to
the dense part of every update, and a ``LinearPerturbation`` objective is
unwrapped into exactly that correction, so the corrected loop is literally
SAGA on the shifted objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import split_perturbation
from .records import TraceRecord

__all__ = [
    "SagaState",
    "init_saga",
    "saga_step",
    "run_saga",
    "rebuild_grad_sum",
    "refresh_memory",
]

# Memory sum rebuilt from scratch this often (in passes) to kill fp drift.
GRAD_SUM_REFRESH_PASSES = 10


@dataclass
class SagaState:
    """Parameters plus per-example gradient memory and its running sum.

    ``memory`` holds one scalar statistic per example for GLM losses and one
    full data-fit gradient vector per example for explicit quadratics;
    ``grad_sum`` is the sum of the reconstructed data-fit gradients. A state
    is exclusively owned by one execution context.
    """

    w: np.ndarray
    memory: np.ndarray
    grad_sum: np.ndarray
    step: float
    rng: np.random.Generator
    node_id: int = 0
    passes_done: int = 0
    steps_done: int = 0


def _compute_grad_sum(obj, data, memory):
    """Sum of stored data-fit gradients; shared by init and drift refresh."""
    if obj.is_glm:
        dense = data.dense_matrix()
        if dense is not None:
            return dense.T @ memory
        out = np.zeros(data.dimension)
        for i, (idx, val) in enumerate(data.feature_rows()):
            out[idx] += memory[i] * val
        return out
    return memory.sum(axis=0)


def rebuild_grad_sum(state, obj, data):
    base, _ = split_perturbation(obj)
    state.grad_sum = _compute_grad_sum(base, data, state.memory)
    return state


def refresh_memory(state, obj, data, at_w=None):
    """Reset every memory cell to the gradient at one common point and
    rebuild the running sum."""
    base, _ = split_perturbation(obj)
    w = state.w if at_w is None else np.asarray(at_w, dtype=np.float64)
    if base.is_glm:
        state.memory = np.array(base.memory_stats(data, w), dtype=np.float64)
    else:
        state.memory = np.tile(base.full_gradient(None, w), (data.count, 1))
    state.grad_sum = _compute_grad_sum(base, data, state.memory)
    return state


def init_saga(obj, data, w0, step_rule="auto", seed=0, node_id=0):
    """Fill the gradient memory with one pass at ``w0`` and build the state.

    ``step_rule`` is "auto" for the parameter-free 1/(3L) step, or an
    explicit positive step size. ``node_id`` selects the sampling sub-stream
    so cluster nodes draw from disjoint, order-independent sequences.
    """
    base, _ = split_perturbation(obj)
    if data.count == 0:
        raise ValueError("empty data")
    w0 = np.asarray(w0, dtype=np.float64)
    if w0.size != data.dimension:
        raise ValueError("dimension mismatch between w0 and data")
    if step_rule == "auto":
        L, _ = base.smoothness(data)
        step = 1.0 / (3.0 * L)
    else:
        step = float(step_rule)
    if step <= 0:
        raise ValueError("step size must be positive")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, node_id])))
    state = SagaState(
        w=w0.copy(),
        memory=np.zeros(data.count),
        grad_sum=np.zeros(data.dimension),
        step=step,
        rng=rng,
        node_id=node_id,
    )
    refresh_memory(state, base, data, at_w=w0)
    return state


def _glm_steps(state, obj, data, js, correction):
    w = state.w
    mem = state.memory
    gsum = state.grad_sum
    gamma = state.step
    lam = obj.lam
    n = data.count
    rows = data.feature_rows()
    labels = data.labels()
    stat = obj.stat
    for j in js:
        j = int(j)
        idx, val = rows[j]
        a_new = stat(float(val @ w[idx]), labels[j])
        dv = (a_new - mem[j]) * val
        direction = gsum / n
        if lam != 0.0:
            direction += lam * w
        if correction is not None:
            direction += correction
        direction[idx] += dv
        w = w - gamma * direction
        gsum[idx] += dv
        mem[j] = a_new
    state.w = w
    state.steps_done += len(js)


def _quad_steps(state, obj, data, js, correction):
    w = state.w
    mem = state.memory
    gsum = state.grad_sum
    gamma = state.step
    n = data.count
    H = obj.matrix
    c = obj.center
    for j in js:
        j = int(j)
        g_new = H @ (w - c)
        delta = g_new - mem[j]
        direction = gsum / n
        if correction is not None:
            direction += correction
        direction += delta
        w = w - gamma * direction
        gsum += delta
        mem[j] = g_new
    state.w = w
    state.steps_done += len(js)


def run_steps(state, obj, data, js, correction=None):
    """Run the step kernel on a fixed index sequence. Internal building block."""
    base, extra = split_perturbation(obj)
    if extra is not None:
        correction = extra if correction is None else correction + extra
    if base.is_glm:
        _glm_steps(state, base, data, js, correction)
    else:
        _quad_steps(state, base, data, js, correction)
    return state


def saga_step(state, obj, data, j=None):
    """One update: sample j (or use the given one), refresh its memory cell
    at the pre-update point, and move by the bracketed difference plus the
    memory average and the dense regularizer term."""
    if j is None:
        j = int(state.rng.integers(0, data.count))
    return run_steps(state, obj, data, [j])


def run_saga(state, obj, data, passes, trace_every=1, total_pass_offset=1):
    """Run ``passes`` epochs of N uniform sampled steps each.

    Emits one TraceRecord per ``trace_every`` passes with the objective
    value, gradient norm and a parameter snapshot. ``total_pass_offset``
    accounts for sweeps already spent (the memory-fill pass by default).
    """
    if passes < 0:
        raise ValueError("passes must be nonnegative")
    n = data.count
    records = []
    for _ in range(passes):
        js = state.rng.integers(0, n, size=n)
        run_steps(state, obj, data, js)
        state.passes_done += 1
        if state.passes_done % GRAD_SUM_REFRESH_PASSES == 0:
            rebuild_grad_sum(state, obj, data)
        if trace_every and state.passes_done % trace_every == 0:
            records.append(
                TraceRecord(
                    algo="saga",
                    node=state.node_id,
                    inner_pass=state.passes_done,
                    pass_opt=state.passes_done,
                    pass_total=state.passes_done + total_pass_offset,
                    f=obj.value(data, state.w),
                    grad_norm=float(np.linalg.norm(obj.full_gradient(data, state.w))),
                    w=state.w.copy(),
                )
            )
    return state, records
