"""Deterministic full-gradient baselines.

Gradient descent with a fixed 1/L step, limited-memory BFGS with the
two-loop recursion and Armijo backtracking, and a one-pass decaying
stochastic-gradient warmstart. Pass accounting charges one pass per
function evaluation and one per gradient evaluation so comparisons against
the sampled methods stay honest.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .records import TraceRecord

__all__ = [
    "LbfgsState",
    "DivergenceError",
    "LineSearchError",
    "gd_run",
    "lbfgs_run",
    "sgd_warmstart",
]

_WARMSTART_SALT = 30577

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 60


class DivergenceError(RuntimeError):
    pass


class LineSearchError(RuntimeError):
    pass


@dataclass
class LbfgsState:
    """Iterate plus the ring buffer of (s, y) correction pairs.

    Pairs failing the curvature condition s.y > 1e-12 |s||y| are dropped
    rather than stored. The threshold is relative: an absolute cutoff would
    reject every pair once steps shrink (s.y scales with the squared step
    length), freezing the curvature model mid-run.
    """

    w: np.ndarray
    memory: int
    history: deque = field(default_factory=deque)
    iteration: int = 0

    def push(self, s, y):
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            self.history.append((s, y, 1.0 / sy))
            while len(self.history) > self.memory:
                self.history.popleft()


def gd_run(obj, data, w0, steps, step_rule="auto"):
    """Plain gradient descent ``w <- w - gamma g(w)``.

    ``step_rule`` is "auto" for 1/L or an explicit step. Raises
    DivergenceError when the objective exceeds ten times its starting value.
    """
    w = np.asarray(w0, dtype=np.float64).copy()
    if step_rule == "auto":
        L, _ = obj.smoothness(data)
        gamma = 1.0 / L
    else:
        gamma = float(step_rule)
    if gamma <= 0:
        raise ValueError("step size must be positive")
    f0 = obj.value(data, w)
    trace = []
    for it in range(1, int(steps) + 1):
        g = obj.full_gradient(data, w)
        w = w - gamma * g
        f = obj.value(data, w)
        if f > 10.0 * f0 + 1e-12:
            raise DivergenceError(f"objective rose to {f} from {f0} at step {it}")
        trace.append(
            TraceRecord(
                algo="gd",
                node=0,
                inner_pass=it,
                pass_opt=it,
                pass_total=it,
                f=f,
                grad_norm=float(np.linalg.norm(obj.full_gradient(data, w))),
                w=w.copy(),
            )
        )
    return w, trace


def _two_loop(grad, history):
    """Standard two-loop recursion with the usual s.y/y.y initial scaling."""
    q = grad.copy()
    alphas = []
    for s, y, inv_sy in reversed(history):
        a = inv_sy * float(s @ q)
        q -= a * y
        alphas.append(a)
    if history:
        s, y, inv_sy = history[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, inv_sy), a in zip(history, reversed(alphas)):
        b = inv_sy * float(y @ q)
        q += (a - b) * s
    return q


def lbfgs_run(obj, data, w0, max_iters=200, tol=1e-10, memory=10):
    """L-BFGS with Armijo backtracking (c1 = 1e-4, halving, unit first try).

    Stops when the gradient norm drops to ``tol`` or the iteration cap is
    hit; the first direction is the negative gradient, and with zero memory
    the method degenerates to line-searched steepest descent.
    """
    state = LbfgsState(w=np.asarray(w0, dtype=np.float64).copy(), memory=int(memory))
    f_passes = 1
    g_passes = 1
    fw = obj.value(data, state.w)
    g = obj.full_gradient(data, state.w)
    trace = [
        TraceRecord(
            algo="lbfgs",
            node=0,
            inner_pass=0,
            pass_opt=0,
            pass_total=f_passes + g_passes,
            f=fw,
            grad_norm=float(np.linalg.norm(g)),
            w=state.w.copy(),
        )
    ]
    for _ in range(int(max_iters)):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            break
        d = -_two_loop(g, state.history)
        gtd = float(g @ d)
        if gtd >= 0.0:
            # fall back to steepest descent if curvature info went bad
            d = -g
            gtd = -gnorm * gnorm
        alpha = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            w_new = state.w + alpha * d
            f_new = obj.value(data, w_new)
            f_passes += 1
            if f_new <= fw + ARMIJO_C1 * alpha * gtd:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise LineSearchError(
                f"no Armijo step after {MAX_HALVINGS} halvings at iteration "
                f"{state.iteration} (f={fw}, |g|={gnorm}, g.d={gtd})"
            )
        g_new = obj.full_gradient(data, w_new)
        g_passes += 1
        state.push(w_new - state.w, g_new - g)
        state.w, fw, g = w_new, f_new, g_new
        state.iteration += 1
        trace.append(
            TraceRecord(
                algo="lbfgs",
                node=0,
                inner_pass=state.iteration,
                pass_opt=state.iteration,
                pass_total=f_passes + g_passes,
                f=fw,
                grad_norm=float(np.linalg.norm(g)),
                w=state.w.copy(),
            )
        )
    return state.w, trace


def sgd_warmstart(obj, data, w0, seed=0):
    """One pass of plain stochastic gradient, step 1/(3L) decayed as
    1/sqrt(i+1). Deterministic given the seed."""
    if data.count == 0:
        raise ValueError("empty data")
    w = np.asarray(w0, dtype=np.float64).copy()
    L, _ = obj.smoothness(data)
    gamma0 = 1.0 / (3.0 * L)
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, _WARMSTART_SALT]))
    )
    n = data.count
    js = rng.integers(0, n, size=n)
    rows = data.feature_rows()
    labels = data.labels()
    lam = obj.lam
    for i, j in enumerate(js):
        j = int(j)
        gamma = gamma0 / np.sqrt(i + 1.0)
        if obj.is_glm:
            idx, val = rows[j]
            a = obj.stat(float(val @ w[idx]), labels[j])
            if lam:
                w = w - gamma * lam * w
            w[idx] -= gamma * a * val
        else:
            w = w - gamma * obj.full_gradient(None, w)
    return w
