"""Closed-form machinery for the quadratic case.

Per-shard Hessians ``H_k = (K/N) sum_i x_i x_i^T + lam I`` with their local
minimizers, the pairwise contraction constant ``rho = max_{k != l}
||I - H_k^{-1} H_l||`` that governs the per-round rate ``(1 - 1/K) rho`` of
the synchronized scheme, and the large-dimension Wishart predictions: for
aspect ratio ``g = d K / N`` the pair norm tends to ``2 sqrt(g) / (1 -
sqrt(g))``, the norm of a white Wishart matrix to ``(1 + sqrt(g))^2`` and
its inverse trace to ``d / (1 - g)``.

Everything here assumes balanced shards (sizes equal; the partitioner
guarantees a difference of at most one) and is restricted to dense matrices
of dimension at most ``MAX_DIMENSION``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "ShardHessian",
    "TheoryParams",
    "WishartStats",
    "SingularHessianError",
    "shard_hessians",
    "global_quadratic",
    "rho_bound",
    "wishart_limit",
    "wishart_empirics",
    "spectral_norm",
    "spectral_norm_dense",
]

MAX_DIMENSION = 2000


class SingularHessianError(np.linalg.LinAlgError):
    pass


@dataclass
class ShardHessian:
    """A node's quadratic model: Hessian, local minimizer, sample count."""

    node_id: int
    matrix: np.ndarray
    center: np.ndarray
    sample_count: int


@dataclass
class TheoryParams:
    """Contraction parameters: aspect ratio d*K/N (None when >= 1, where the
    limit formula diverges), the pairwise rho, and (1 - 1/K) * rho."""

    aspect_ratio: float | None
    rho: float
    contraction: float


@dataclass
class WishartStats:
    """Monte-Carlo estimates next to their large-dimension limits."""

    norm: float
    norm_limit: float
    trace_inv: float
    trace_inv_limit: float
    pair_norm: float
    pair_norm_limit: float
    aspect_ratio: float


def spectral_norm(matvec, rmatvec, dim, tol=1e-10, max_iters=5000):
    """Largest singular value via power iteration on M^T M.

    Deterministic start vector; converges when successive estimates agree to
    ``tol`` relative. Returns the best estimate after ``max_iters`` even if
    the top singular values are nearly tied (the estimate error decays like
    the square of their ratio, far faster than the iterate itself).
    """
    v = np.ones(dim) + 1e-3 * np.arange(dim)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iters):
        mv = matvec(v)
        new_sigma = float(np.linalg.norm(mv))
        av = rmatvec(mv)
        na = float(np.linalg.norm(av))
        if na == 0.0:
            return new_sigma
        v = av / na
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1.0):
            return new_sigma
        sigma = new_sigma
    return sigma


def spectral_norm_dense(mat, tol=1e-10, max_iters=5000):
    mat = np.asarray(mat, dtype=np.float64)
    return spectral_norm(lambda v: mat @ v, lambda u: mat.T @ u, mat.shape[1], tol, max_iters)


def _factor(matrix, node_id=None):
    try:
        return cho_factor(matrix)
    except np.linalg.LinAlgError:
        where = "global Hessian" if node_id is None else f"node {node_id} Hessian"
        raise SingularHessianError(f"{where} is singular or indefinite") from None


def shard_hessians(obj, shards):
    """Quadratic models of every shard.

    For the data-backed quadratic (least squares) each Hessian is
    ``(K/N) X_k^T X_k + lam I`` with the local minimizer as center; explicit
    quadratic objectives replicate their own matrix and center. Raises for
    non-quadratic objectives and for singular shard Hessians.
    """
    if not shards:
        raise ValueError("no shards given")
    d = shards[0].dimension
    if d > MAX_DIMENSION:
        raise ValueError(f"dense theory layer is limited to d <= {MAX_DIMENSION}")
    k = len(shards)
    total = sum(s.count for s in shards)
    out = []
    if getattr(obj, "kind", None) == "quadratic":
        for s in shards:
            out.append(ShardHessian(s.node_id, obj.matrix, obj.center.copy(), s.count))
        return out
    if getattr(obj, "kind", None) != "lstsq":
        raise ValueError("shard Hessians require a quadratic objective")
    lam = obj.lam
    for s in shards:
        x = s.dense_matrix()
        if x is None:
            raise ValueError("shard too large for the dense theory layer")
        h = (k / total) * (x.T @ x)
        if lam:
            h = h + lam * np.eye(d)
        b = (k / total) * (x.T @ s.labels())
        factor = _factor(h, s.node_id)
        center = cho_solve(factor, b)
        out.append(ShardHessian(s.node_id, h, center, s.count))
    return out


def global_quadratic(hessians):
    """Average Hessian and the global minimizer solving
    ``(sum_l H_l) w* = sum_l H_l w_l*``."""
    h_sum = sum(h.matrix for h in hessians)
    rhs = sum(h.matrix @ h.center for h in hessians)
    factor = _factor(h_sum)
    w_star = cho_solve(factor, rhs)
    return h_sum / len(hessians), w_star


def rho_bound(hessians, tol=1e-10):
    """Pairwise contraction constant.

    ``rho`` is the max over ordered pairs k != l of the spectral norm of
    ``I - H_k^{-1} H_l``, applied through a factorization of ``H_k`` (never
    an explicit inverse); a single node yields rho = 0 by convention.
    """
    k = len(hessians)
    d = hessians[0].matrix.shape[0]
    total = sum(h.sample_count for h in hessians)
    aspect = d * k / total
    if aspect >= 1.0:
        aspect = None
    if k == 1:
        return TheoryParams(aspect, 0.0, 0.0)
    factors = [_factor(h.matrix, h.node_id) for h in hessians]
    rho = 0.0
    for a in range(k):
        fa = factors[a]
        for b in range(k):
            if a == b:
                continue
            hb = hessians[b].matrix
            norm = spectral_norm(
                lambda v: v - cho_solve(fa, hb @ v),
                lambda u: u - hb @ cho_solve(fa, u),
                d,
                tol=tol,
            )
            rho = max(rho, norm)
    return TheoryParams(aspect, rho, (1.0 - 1.0 / k) * rho)


def wishart_limit(aspect_ratio):
    """Large-dimension limit of the pairwise norm: 2 sqrt(g) / (1 - sqrt(g))."""
    g = float(aspect_ratio)
    if not 0.0 < g < 1.0:
        raise ValueError("aspect ratio must lie in (0, 1)")
    r = math.sqrt(g)
    return 2.0 * r / (1.0 - r)


def wishart_empirics(d, n_per_node, pairs, seed=0, power_tol=1e-8):
    """Monte-Carlo check of the white-Wishart limits.

    Samples ``pairs + 1`` matrices ``H = X^T X / n`` with standard Gaussian
    rows (no regularizer), each from an independent seeded stream, and
    averages the spectral norm, the inverse trace over d, and the pairwise
    norm over consecutive pairs.
    """
    d = int(d)
    n = int(n_per_node)
    pairs = int(pairs)
    if n <= d:
        raise ValueError("need n_per_node > d for invertible samples")
    if pairs < 1:
        raise ValueError("need at least one pair")
    aspect = d / n
    mats = []
    for i in range(pairs + 1):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        x = rng.standard_normal((n, d))
        mats.append(x.T @ x / n)
    norms = [spectral_norm(lambda v, m=m: m @ v, lambda u, m=m: m @ u, d, tol=power_tol) for m in mats]
    traces = []
    factors = []
    eye = np.eye(d)
    for m in mats:
        factor = _factor(m)
        factors.append(factor)
        traces.append(float(np.trace(cho_solve(factor, eye))) / d)
    pair_norms = []
    for i in range(pairs):
        fa = factors[i]
        hb = mats[i + 1]
        pair_norms.append(
            spectral_norm(
                lambda v: v - cho_solve(fa, hb @ v),
                lambda u: u - hb @ cho_solve(fa, u),
                d,
                tol=power_tol,
            )
        )
    return WishartStats(
        norm=float(np.mean(norms)),
        norm_limit=(1.0 + math.sqrt(aspect)) ** 2,
        trace_inv=float(np.mean(traces)),
        trace_inv_limit=1.0 / (1.0 - aspect),
        pair_norm=float(np.mean(pair_norms)),
        pair_norm_limit=wishart_limit(aspect),
        aspect_ratio=aspect,
    )
