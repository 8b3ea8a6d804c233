"""Excess-error bookkeeping, the inner/discrepancy error decomposition and
the per-round empirical rates, emitted as CSV.

The average distance of the nodes to the optimum splits as

    mean_k |w_k - w*|  <=  mean_k |w_k - w_k_inf|  +  mean_k |w_k_inf - w*|

(the average inner error, reducible without communication, plus the
discrepancy error, which only a synchronization can shrink). The rate
report computes, per round, the excess-error reduction between consecutive
synchronizations (rho_tilde) next to its random-matrix prediction
(rho_hat), and per local pass the worst-node reduction of the global
objective (alpha_tilde) and of the corrected local surrogate the inner loop
actually optimizes (omega_tilde).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .baselines import LineSearchError, lbfgs_run
from .cluster import node_quadratic
from .data import Dataset
from .losses import LinearPerturbation, split_perturbation
from .records import TraceRecord
from .theory import wishart_limit

__all__ = [
    "ConvergenceError",
    "MetricReport",
    "reference_optimum",
    "decompose_error",
    "rate_report",
    "write_csv",
    "read_csv",
    "attach_excess",
]

# A rate whose denominator excess falls below this is reported as absent.
RATE_FLOOR = 1e-14

CSV_COLUMNS = [
    "run_id",
    "algo",
    "K",
    "U",
    "round",
    "pass_opt",
    "pass_total",
    "node",
    "f",
    "excess",
    "grad_norm",
    "inner_err",
    "disc_err",
    "rho_tilde",
    "alpha_tilde",
    "omega_tilde",
]


class ConvergenceError(RuntimeError):
    """Reference solve missed its tolerance; carries the best point found."""

    def __init__(self, message, w_best, f_best):
        super().__init__(message)
        self.w_best = w_best
        self.f_best = f_best


@dataclass
class MetricReport:
    """Per-round and per-pass convergence rates for one cluster run."""

    nodes: int
    local_passes: int
    rounds: list[int]
    rho_tilde: list[float | None]
    rho_hat: float | None
    alpha_tilde: list[list[float | None]]
    omega_tilde: list[list[float | None]]
    inner_error: list[float]
    disc_error: list[float]
    f_star: float = field(default=float("nan"))


def _newton_polish(obj, data, w, tol, max_steps=30):
    """Damped Newton steps on the dense Hessian, contracting the gradient
    norm. L-BFGS stalls just above tight tolerances once objective
    differences fall below float resolution; this certifies the endpoint."""
    grad = obj.full_gradient(data, w)
    for _ in range(max_steps):
        norm0 = np.linalg.norm(grad)
        if norm0 <= tol:
            break
        step = cho_solve(cho_factor(obj.hessian(data, w)), grad)
        alpha = 1.0
        for _ in range(40):
            candidate = w - alpha * step
            g_new = obj.full_gradient(data, candidate)
            if np.linalg.norm(g_new) < norm0:
                w, grad = candidate, g_new
                break
            alpha *= 0.5
        else:
            break
    return w, float(np.linalg.norm(grad))


def reference_optimum(obj, data, tol=1e-12, max_iters=500):
    """Certified minimizer and optimal value.

    Quadratics solve in closed form. Logistic objectives run L-BFGS toward
    gradient norm ``tol``, with a damped Newton polish for the last digits;
    if the certificate still cannot be met, ConvergenceError carries the
    best point found.
    """
    base, extra = split_perturbation(obj)
    if extra is not None:
        raise ValueError("reference optimum expects an unperturbed objective")
    if base.kind == "quadratic":
        w = base.center.copy()
        return w, base.value(None, w)
    if base.kind == "lstsq":
        n = data.count
        d = data.dimension
        x = data.dense_matrix()
        if x is not None:
            h = x.T @ x / n
            b = x.T @ data.labels() / n
        else:
            h = np.zeros((d, d))
            b = np.zeros(d)
            labels = data.labels()
            for i, (idx, val) in enumerate(data.feature_rows()):
                h[np.ix_(idx, idx)] += np.outer(val, val) / n
                b[idx] += labels[i] * val / n
        if base.lam:
            h = h + base.lam * np.eye(d)
        try:
            factor = cho_factor(h)
        except np.linalg.LinAlgError:
            raise ValueError("singular least-squares system; add regularization") from None
        w = cho_solve(factor, b)
        return w, base.value(data, w)
    if base.lam <= 0:
        raise ValueError("reference optimum requires a strongly convex objective")
    w, _ = lbfgs_run(base, data, np.zeros(data.dimension), max_iters=max_iters, tol=tol)
    w, grad_norm = _newton_polish(base, data, w, tol)
    f = base.value(data, w)
    if grad_norm > tol:
        raise ConvergenceError(
            f"reference solve stalled at gradient norm {grad_norm:.3e} (tol {tol:.1e})",
            w,
            f,
        )
    return w, f


def decompose_error(node_params, inner_optima, w_star, slack=1e-12):
    """Split the mean node error into inner and discrepancy terms.

    Returns ``(inner, disc)`` with inner = mean_k |w_k - w_k_inf| and
    disc = mean_k |w_k_inf - w*|, verifying the triangle inequality against
    the direct mean distance.
    """
    if inner_optima is None or len(inner_optima) != len(node_params):
        raise ValueError("one inner optimum per node is required")
    w_star = np.asarray(w_star, dtype=np.float64)
    inner = float(np.mean([np.linalg.norm(w - wi) for w, wi in zip(node_params, inner_optima)]))
    disc = float(np.mean([np.linalg.norm(wi - w_star) for wi in inner_optima]))
    direct = float(np.mean([np.linalg.norm(w - w_star) for w in node_params]))
    if direct > inner + disc + slack:
        raise ArithmeticError(
            f"error decomposition violated: {direct} > {inner} + {disc}"
        )
    return inner, disc


def _ratio(numerator, denominator):
    return numerator / denominator if denominator > RATE_FLOOR else None


def _index_trace(traces, rounds):
    """Split a cluster trace into round-start, per-pass and end records."""
    starts = {}
    ends = {}
    passes = {}
    for r in traces:
        if r.node == "avg" and r.inner_pass == 0:
            starts[r.round] = r
        elif isinstance(r.node, (int, np.integer)):
            if r.anchor_grad is not None:
                ends[(r.round, r.node)] = r
            if r.inner_pass is not None and r.w is not None:
                passes.setdefault((r.round, r.node), {})[r.inner_pass] = r
    missing = [t for t in range(rounds + 1) if t not in starts]
    if missing:
        raise ValueError(f"trace lacks round-start records for rounds {missing}")
    return starts, ends, passes


def _inner_optimum(obj, shard, corr, w_start, warm, quad_cache):
    """Minimizer of the round's frozen corrected surrogate on one shard."""
    base, _ = split_perturbation(obj)
    if base.kind in ("quadratic", "lstsq"):
        if shard.node_id not in quad_cache:
            quad_cache[shard.node_id] = node_quadratic(base, shard)
        _, center, factor = quad_cache[shard.node_id]
        if corr is None:
            return center.copy()
        return center - cho_solve(factor, corr)
    surrogate = base if corr is None else LinearPerturbation(base, corr, w_start)
    try:
        w, _ = lbfgs_run(surrogate, shard, warm, max_iters=500, tol=1e-10)
    except LineSearchError:
        w = warm
    w, grad_norm = _newton_polish(surrogate, shard, w, 1e-10)
    if grad_norm > 1e-10:
        raise ConvergenceError(
            f"inner optimum solve stalled at gradient norm {grad_norm:.3e}",
            w,
            surrogate.value(shard, w),
        )
    return w


def rate_report(traces, obj, shards, config):
    """All four rate sequences for one run, exactly as defined.

    rho_tilde[t] is the excess-error ratio between round starts t and t+1;
    rho_hat its random-matrix prediction (1 - 1/K) 2 sqrt(g)/(1 - sqrt(g));
    alpha_tilde[t][u] the worst-node per-pass reduction of the global excess
    toward each node's inner optimum, and omega_tilde[t][u] the same for the
    corrected surrogate f_k(w) + corr_k . (w - w_start) the inner loop
    optimizes. Inner optima come in closed form for quadratics and from an
    L-BFGS solve of the frozen surrogate (gradient norm 1e-10) otherwise.
    """
    k = config.nodes
    u_passes = config.local_passes
    merged = Dataset([ex for s in shards for ex in s.examples], shards[0].dimension)
    w_star, f_star = reference_optimum(obj, merged)
    starts, ends, passes = _index_trace(traces, config.rounds)
    rounds = list(range(config.rounds))

    d = shards[0].dimension
    total = sum(s.count for s in shards)
    aspect = d * k / total
    rho_hat = None
    if 0.0 < aspect < 1.0:
        rho_hat = (1.0 - 1.0 / k) * wishart_limit(aspect)

    rho_tilde = [
        _ratio(starts[t + 1].f - f_star, starts[t].f - f_star) for t in rounds
    ]

    quad_cache = {}
    alpha = []
    omega = []
    inner_err = []
    disc_err = []
    for t in rounds:
        start = starts[t]
        w_start = start.w
        g_used = start.global_avg_grad
        corrs = {}
        optima = {}
        for node_id in range(k):
            end = ends[(t, node_id)]
            corr = None if k == 1 else g_used - end.anchor_grad
            corrs[node_id] = corr
            if config.exact_inner:
                optima[node_id] = end.w
            else:
                optima[node_id] = _inner_optimum(
                    obj, shards[node_id], corr, w_start, end.w, quad_cache
                )

        a_row = []
        o_row = []
        if not config.exact_inner:
            f_seq = {}
            s_seq = {}
            f_inf = {}
            s_inf = {}
            for node_id in range(k):
                corr = corrs[node_id]

                def surrogate(w, _c=corr, _s=shards[node_id]):
                    val = obj.value(_s, w)
                    if _c is not None:
                        val += float(_c @ (w - w_start))
                    return val

                seq = [(w_start, start.f)]
                for u in range(1, u_passes + 1):
                    rec = passes[(t, node_id)][u]
                    seq.append((rec.w, rec.f))
                f_seq[node_id] = [fv for _, fv in seq]
                s_seq[node_id] = [surrogate(w) for w, _ in seq]
                f_inf[node_id] = obj.value(merged, optima[node_id])
                s_inf[node_id] = surrogate(optima[node_id])
            for u in range(u_passes):
                a_ratios = [
                    _ratio(f_seq[n][u + 1] - f_inf[n], f_seq[n][u] - f_inf[n])
                    for n in range(k)
                ]
                o_ratios = [
                    _ratio(s_seq[n][u + 1] - s_inf[n], s_seq[n][u] - s_inf[n])
                    for n in range(k)
                ]
                a_live = [r for r in a_ratios if r is not None]
                o_live = [r for r in o_ratios if r is not None]
                a_row.append(max(a_live) if a_live else None)
                o_row.append(max(o_live) if o_live else None)
        alpha.append(a_row)
        omega.append(o_row)

        node_ws = [ends[(t, n)].w for n in range(k)]
        ie, de = decompose_error(node_ws, [optima[n] for n in range(k)], w_star)
        inner_err.append(ie)
        disc_err.append(de)

    return MetricReport(
        nodes=k,
        local_passes=u_passes,
        rounds=rounds,
        rho_tilde=rho_tilde,
        rho_hat=rho_hat,
        alpha_tilde=alpha,
        omega_tilde=omega,
        inner_error=inner_err,
        disc_error=disc_err,
        f_star=f_star,
    )


def attach_excess(records, f_star, slack=1e-12):
    """Fill the excess column; f_star must be a certified lower reference."""
    for r in records:
        if r.f is not None:
            excess = r.f - f_star
            if excess < -slack:
                raise ValueError(
                    f"record f={r.f} undercuts the reference optimum {f_star}"
                )
            r.excess = excess
    return records


def report_records(report):
    """Flatten a MetricReport into CSV-ready rows."""
    u_passes = report.local_passes
    rows = []
    for i, t in enumerate(report.rounds):
        rows.append(
            TraceRecord(
                algo="dsaga",
                node="avg",
                round=t,
                pass_opt=(t + 1) * u_passes,
                pass_total=(t + 1) * (u_passes + 1),
                inner_err=report.inner_error[i],
                disc_err=report.disc_error[i],
                rho_tilde=report.rho_tilde[i],
                rho_hat=report.rho_hat,
            )
        )
        for u, (a, o) in enumerate(zip(report.alpha_tilde[i], report.omega_tilde[i])):
            rows.append(
                TraceRecord(
                    algo="dsaga",
                    node="max",
                    round=t,
                    inner_pass=u + 1,
                    pass_opt=t * u_passes + u + 1,
                    pass_total=t * (u_passes + 1) + u + 2,
                    alpha_tilde=a,
                    omega_tilde=o,
                    rho_hat=report.rho_hat,
                )
            )
    return rows


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(records, destination, *, run_id="", nodes=None, local_passes=None,
              include_rho_hat=False):
    """Write trace records or a MetricReport.

    Fixed column order (see CSV_COLUMNS); missing values are empty; floats
    use the shortest round-trip decimal. ``include_rho_hat`` appends the
    prediction column used by sweep outputs.
    """
    if isinstance(records, MetricReport):
        nodes = records.nodes if nodes is None else nodes
        local_passes = records.local_passes if local_passes is None else local_passes
        records = report_records(records)
    columns = CSV_COLUMNS + (["rho_hat"] if include_rho_hat else [])

    def emit(handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for r in records:
            row = [
                run_id,
                r.algo,
                _fmt(nodes),
                _fmt(local_passes),
                _fmt(r.round),
                _fmt(r.pass_opt),
                _fmt(r.pass_total),
                "" if r.node is None else str(r.node),
                _fmt(r.f),
                _fmt(r.excess),
                _fmt(r.grad_norm),
                _fmt(r.inner_err),
                _fmt(r.disc_err),
                _fmt(r.rho_tilde),
                _fmt(r.alpha_tilde),
                _fmt(r.omega_tilde),
            ]
            if include_rho_hat:
                row.append(_fmt(r.rho_hat))
            writer.writerow(row)

    if hasattr(destination, "write"):
        emit(destination)
    else:
        with open(destination, "w", encoding="utf-8", newline="") as handle:
            emit(handle)


def _parse_cell(cell, as_int=False):
    if cell == "":
        return None
    return int(cell) if as_int else float(cell)


def read_csv(source):
    """Parse a trace CSV back into records (scalar fields only)."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8", newline="") as handle:
            text = handle.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    expected = CSV_COLUMNS
    if header[: len(expected)] != expected:
        raise ValueError("unexpected CSV header")
    has_rho_hat = len(header) > len(expected) and header[len(expected)] == "rho_hat"
    records = []
    for row in reader:
        node = row[7]
        rec = TraceRecord(
            algo=row[1],
            node=int(node) if node.lstrip("-").isdigit() else node,
            round=_parse_cell(row[4], as_int=True),
            pass_opt=_parse_cell(row[5], as_int=True) or 0,
            pass_total=_parse_cell(row[6], as_int=True) or 0,
            f=_parse_cell(row[8]),
            excess=_parse_cell(row[9]),
            grad_norm=_parse_cell(row[10]),
            inner_err=_parse_cell(row[11]),
            disc_err=_parse_cell(row[12]),
            rho_tilde=_parse_cell(row[13]),
            alpha_tilde=_parse_cell(row[14]),
            omega_tilde=_parse_cell(row[15]),
        )
        if has_rho_hat:
            rec.rho_hat = _parse_cell(row[16])
        records.append(rec)
    return records
