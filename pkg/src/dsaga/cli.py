"""Command-line experiment runner.

Subcommands: ``run`` executes one algorithm and writes its trace CSV (plus
a metrics CSV for the distributed runs), ``verify`` checks the quadratic
contraction bound or the Wishart limit predictions, ``sweep`` repeats a run
across node counts or synchronization periods into one merged CSV, and
``optimum`` prints the certified reference optimum. Every run is
reproducible byte-for-byte from its flag set; DSAGA_THREADS caps simulator
parallelism.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
from dataclasses import dataclass

import numpy as np

from .baselines import gd_run, lbfgs_run, sgd_warmstart
from .cluster import ClusterConfig, run_dsaga
from .data import generate_gaussian, parse_libsvm, partition
from .diagnostics import (
    attach_excess,
    rate_report,
    reference_optimum,
    report_records,
    write_csv,
)
from .losses import LeastSquaresLoss, LogisticLoss
from .saga import init_saga, run_saga
from .theory import global_quadratic, rho_bound, shard_hessians, wishart_empirics

__all__ = ["main", "entry", "RunSpec"]

_CONFIG_ALIASES = {"lambda": "lam", "k": "nodes", "u": "local_passes", "rounds": "rounds"}


@dataclass
class RunSpec:
    """A validated run request."""

    algo: str
    data_path: str | None
    synthetic: str | None
    objective: str
    lam: float
    passes: int
    nodes: int
    local_passes: int
    rounds: int
    seed: int
    exact_inner: bool
    warmstart: bool
    step: float | str
    trace_every: int
    out: str | None
    run_id: str

    def validate(self):
        if self.algo not in ("saga", "dsaga", "gd", "lbfgs"):
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.data_path is None and self.synthetic is None:
            raise ValueError("give either --data or --synthetic")
        if self.objective not in ("logistic", "quadratic"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.nodes < 1 or self.local_passes < 1 or self.rounds < 1:
            raise ValueError("k, u and rounds must all be >= 1")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.exact_inner and self.objective != "quadratic":
            raise ValueError("--exact-inner requires the quadratic objective")


def _parse_synthetic(spec, seed):
    """``gaussian:n=1000,d=20[,var=1][,labels=unit|sign|linear][,noise=0]``"""
    kind, _, rest = spec.partition(":")
    if kind != "gaussian":
        raise ValueError(f"unknown synthetic kind {kind!r}")
    params = {"var": 1.0, "labels": "unit", "noise": 0.0}
    for part in rest.split(","):
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"bad synthetic parameter {part!r}")
        params[key.strip()] = value.strip()
    try:
        n = int(params["n"])
        d = int(params["d"])
    except KeyError as exc:
        raise ValueError(f"synthetic spec needs {exc.args[0]}=") from None
    var = float(params["var"])
    noise = float(params["noise"])
    labels = params["labels"]
    if labels not in ("unit", "sign", "linear"):
        raise ValueError(f"unknown label rule {labels!r}")
    if var <= 0:
        raise ValueError("var must be positive")

    labeler = None
    if labels != "unit":
        def labeler(x, rng):
            plant = rng.standard_normal(d)
            margins = x @ plant
            if noise:
                margins = margins + noise * rng.standard_normal(len(x))
            if labels == "sign":
                return np.where(margins >= 0, 1.0, -1.0)
            return margins

    covariance = "identity" if var == 1.0 else np.full(d, var)
    return generate_gaussian(n, d, covariance, seed=seed, labeler=labeler)


def _load_dataset(spec):
    if spec.data_path is not None:
        with open(spec.data_path, "r", encoding="utf-8") as handle:
            return parse_libsvm(handle)
    return _parse_synthetic(spec.synthetic, spec.seed)


def _build_objective(spec):
    if spec.objective == "logistic":
        return LogisticLoss(spec.lam)
    return LeastSquaresLoss(spec.lam)


def _default_labels(spec):
    # logistic runs need {-1, +1} labels; quadratic runs just need targets
    if spec.synthetic is not None and "labels=" not in spec.synthetic:
        if spec.objective == "logistic":
            spec.synthetic += ",labels=sign"
    return spec


def _metrics_path(out):
    stem, ext = os.path.splitext(out)
    return f"{stem}.metrics{ext or '.csv'}"


def cmd_run(spec):
    spec = _default_labels(spec)
    spec.validate()
    dataset = _load_dataset(spec)
    obj = _build_objective(spec)
    w0 = np.zeros(dataset.dimension)
    extra_total = 0
    if spec.warmstart:
        w0 = sgd_warmstart(obj, dataset, w0, spec.seed)
        extra_total = 1

    metrics = None
    if spec.algo == "saga":
        shard = partition(dataset, 1, spec.seed)[0]
        state = init_saga(obj, shard, w0, spec.step, spec.seed, node_id=0)
        _, records = run_saga(
            state, obj, shard, spec.passes, spec.trace_every,
            total_pass_offset=1 + extra_total,
        )
        ref_data = shard
    elif spec.algo == "dsaga":
        shards = partition(dataset, spec.nodes, spec.seed)
        config = ClusterConfig(
            nodes=spec.nodes,
            local_passes=spec.local_passes,
            rounds=spec.rounds,
            seed=spec.seed,
            step_rule=spec.step,
            exact_inner=spec.exact_inner,
        )
        _, records = run_dsaga(obj, shards, config, w0)
        if extra_total:
            for r in records:
                r.pass_total += extra_total
        metrics = rate_report(records, obj, shards, config)
        ref_data = dataset
    elif spec.algo == "gd":
        _, records = gd_run(obj, dataset, w0, spec.passes, spec.step)
        ref_data = dataset
    else:
        _, records = lbfgs_run(obj, dataset, w0, max_iters=spec.passes)
        ref_data = dataset

    if metrics is not None:
        f_star = metrics.f_star
    else:
        _, f_star = reference_optimum(obj, ref_data)
    attach_excess(records, f_star)

    if spec.out:
        write_csv(records, spec.out, run_id=spec.run_id, nodes=spec.nodes,
                  local_passes=spec.local_passes if spec.algo == "dsaga" else None)
        if metrics is not None:
            write_csv(metrics, _metrics_path(spec.out), run_id=spec.run_id)
    print(f"{spec.run_id}: wrote {len(records)} records", file=sys.stderr)
    return 0


def cmd_verify_lemma1(args):
    if args.synthetic is None:
        raise ValueError("verify lemma1 needs --synthetic")
    dataset = _parse_synthetic(args.synthetic, args.seed)
    obj = LeastSquaresLoss(args.lam)
    shards = partition(dataset, args.nodes, args.seed)
    hessians = shard_hessians(obj, shards)
    params = rho_bound(hessians)
    _, w_star = global_quadratic(hessians)
    config = ClusterConfig(
        nodes=args.nodes, local_passes=1, rounds=args.rounds,
        seed=args.seed, exact_inner=True,
    )
    w0 = np.zeros(dataset.dimension)
    _, records = run_dsaga(obj, shards, config, w0)
    ends = {}
    for r in records:
        if isinstance(r.node, int) and r.anchor_grad is not None:
            ends.setdefault(r.round, {})[r.node] = r.w
    bound = float(params.contraction)
    print(f"rho={float(params.rho)!r} contraction_bound={bound!r}")
    prev = float(np.linalg.norm(w0 - w_star))
    floor = 1e-13 * (1.0 + float(np.linalg.norm(w_star)))
    status = 0
    for t in range(config.rounds):
        current = max(float(np.linalg.norm(ends[t][k] - w_star)) for k in range(args.nodes))
        if prev <= floor:
            print(f"round {t}: converged (error {current!r} at the noise floor)")
            continue
        ratio = current / prev
        ok = ratio <= bound + 1e-9
        print(f"round {t}: ratio={ratio!r} bound={bound!r} {'ok' if ok else 'VIOLATED'}")
        if not ok and status == 0:
            status = 1
            print(f"bound violated at round {t}", file=sys.stderr)
        prev = current
    return status


def cmd_verify_lemma2(args):
    stats = wishart_empirics(args.dim, args.n_per_node, args.pairs, args.seed)
    rows = [
        ("norm", stats.norm, stats.norm_limit, args.tol_norm),
        ("trace_inv", stats.trace_inv, stats.trace_inv_limit, args.tol_trace),
        ("pair_norm", stats.pair_norm, stats.pair_norm_limit, args.tol_rho),
    ]
    status = 0
    print(f"aspect_ratio={float(stats.aspect_ratio)!r}")
    for name, got, limit, tol in rows:
        rel = float(abs(got - limit) / limit)
        ok = rel <= tol
        print(f"{name}: empirical={float(got)!r} predicted={float(limit)!r} "
              f"rel_err={rel!r} tol={float(tol)!r} {'ok' if ok else 'FAILED'}")
        if not ok:
            status = 1
    return status


def cmd_sweep(args):
    values = [int(v) for v in args.values.split(",") if v]
    if not values:
        raise ValueError("sweep needs at least one value")
    axis = args.axis.upper()
    if axis not in ("K", "U"):
        raise ValueError("--axis must be K or U")
    merged = []
    status = 0
    for value in values:
        spec = _spec_from_args(args)
        spec.algo = "dsaga"
        if axis == "K":
            spec.nodes = value
        else:
            spec.local_passes = value
        spec.run_id = f"{args.run_id or 'sweep'}-{axis}{value}"
        spec = _default_labels(spec)
        try:
            spec.validate()
            dataset = _load_dataset(spec)
            obj = _build_objective(spec)
            shards = partition(dataset, spec.nodes, spec.seed)
            config = ClusterConfig(
                nodes=spec.nodes, local_passes=spec.local_passes,
                rounds=spec.rounds, seed=spec.seed, step_rule=spec.step,
                exact_inner=spec.exact_inner,
            )
            w0 = np.zeros(dataset.dimension)
            if spec.warmstart:
                w0 = sgd_warmstart(obj, dataset, w0, spec.seed)
            _, records = run_dsaga(obj, shards, config, w0)
            report = rate_report(records, obj, shards, config)
            attach_excess(records, report.f_star)
            rows = records + report_records(report)
            for r in rows:
                r.rho_hat = report.rho_hat
            merged.append((spec, rows))
        except Exception as exc:  # noqa: BLE001 - one bad sub-run aborts the sweep
            print(f"sweep aborted at {axis}={value}: {exc}", file=sys.stderr)
            status = 1
            break
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as handle:
            first = True
            for spec, rows in merged:
                buf = io.StringIO()
                write_csv(rows, buf, run_id=spec.run_id, nodes=spec.nodes,
                          local_passes=spec.local_passes, include_rho_hat=True)
                text = buf.getvalue()
                if not first:
                    text = text.split("\n", 1)[1]
                handle.write(text)
                first = False
        if status:
            print(f"partial output written to {args.out}", file=sys.stderr)
    return status


def cmd_optimum(args):
    spec = _spec_from_args(args)
    spec.algo = "saga"  # placeholder, not executed
    spec = _default_labels(spec)
    dataset = _load_dataset(spec)
    obj = _build_objective(spec)
    w_star, f_star = reference_optimum(obj, dataset)
    grad_norm = float(np.linalg.norm(obj.full_gradient(dataset, w_star)))
    print(f"f_star={f_star!r} grad_norm={grad_norm!r}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            for value in w_star:
                handle.write(f"{value!r}\n")
    return 0


def _spec_from_args(args):
    step = args.step
    if step != "auto":
        step = float(step)
    run_id = args.run_id
    if not run_id:
        run_id = (
            f"{args.algo}-k{args.nodes}-u{args.local_passes}"
            f"-t{args.rounds}-p{args.passes}-s{args.seed}"
        )
    return RunSpec(
        algo=args.algo,
        data_path=args.data,
        synthetic=args.synthetic,
        objective=args.objective,
        lam=args.lam,
        passes=args.passes,
        nodes=args.nodes,
        local_passes=args.local_passes,
        rounds=args.rounds,
        seed=args.seed,
        exact_inner=args.exact_inner,
        warmstart=args.warmstart,
        step=step,
        trace_every=args.trace_every,
        out=args.out,
        run_id=run_id,
    )


def _add_common(parser):
    parser.add_argument("--data", default=None, help="LIBSVM file to load")
    parser.add_argument("--synthetic", default=None,
                        help="gaussian:n=...,d=...[,var=][,labels=][,noise=]")
    parser.add_argument("--objective", default="logistic",
                        choices=["logistic", "quadratic"])
    parser.add_argument("--lambda", dest="lam", type=float, default=0.0)
    parser.add_argument("--algo", default="saga",
                        choices=["saga", "dsaga", "gd", "lbfgs"])
    parser.add_argument("--passes", type=int, default=10)
    parser.add_argument("--k", dest="nodes", type=int, default=1)
    parser.add_argument("--u", dest="local_passes", type=int, default=1)
    parser.add_argument("--rounds", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--step", default="auto")
    parser.add_argument("--exact-inner", action="store_true")
    parser.add_argument("--warmstart", action="store_true")
    parser.add_argument("--trace-every", type=int, default=1)
    parser.add_argument("--out", default=None)
    parser.add_argument("--run-id", default="")
    parser.add_argument("--config", default=None,
                        help="key=value file overriding flags")


def _apply_config(args, path):
    with open(path, "r", encoding="utf-8") as handle:
        for raw in handle:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"bad config line {raw.strip()!r}")
            key = key.strip().replace("-", "_")
            key = _CONFIG_ALIASES.get(key, key)
            value = value.strip()
            if not hasattr(args, key):
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(args, key)
            if isinstance(current, bool):
                setattr(args, key, value.lower() in ("1", "true", "yes"))
            elif isinstance(current, int):
                setattr(args, key, int(value))
            elif isinstance(current, float):
                setattr(args, key, float(value))
            else:
                setattr(args, key, value)
    return args


def _build_parser():
    parser = argparse.ArgumentParser(prog="dsaga")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one algorithm and write its trace")
    _add_common(run_p)

    verify_p = sub.add_parser("verify", help="check the theory predictions")
    verify_p.add_argument("which", choices=["lemma1", "lemma2"])
    _add_common(verify_p)
    verify_p.add_argument("--dim", type=int, default=200)
    verify_p.add_argument("--n-per-node", type=int, default=2000)
    verify_p.add_argument("--pairs", type=int, default=4)
    verify_p.add_argument("--tol-norm", type=float, default=0.05)
    verify_p.add_argument("--tol-trace", type=float, default=0.05)
    verify_p.add_argument("--tol-rho", type=float, default=0.20)

    sweep_p = sub.add_parser("sweep", help="repeat a run across K or U values")
    _add_common(sweep_p)
    sweep_p.add_argument("--axis", required=True)
    sweep_p.add_argument("--values", required=True)

    optimum_p = sub.add_parser("optimum", help="print the reference optimum")
    _add_common(optimum_p)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        if args.config:
            _apply_config(args, args.config)
        if args.command == "run":
            return cmd_run(_spec_from_args(args))
        if args.command == "verify":
            if args.which == "lemma1":
                if args.objective == "logistic":
                    args.objective = "quadratic"
                return cmd_verify_lemma1(args)
            return cmd_verify_lemma2(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "optimum":
            return cmd_optimum(args)
        parser.error(f"unknown command {args.command!r}")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1
    return 0


def entry():
    sys.exit(main())
