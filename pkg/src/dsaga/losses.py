"""Objectives and their gradients.

Two families are supported. Generalized linear losses (l2-regularized
logistic regression and least squares) expose per-example gradients through
a scalar sufficient statistic ``a`` with data-fit gradient ``a * x``; the
regularizer enters the updates densely, outside the stored statistic.
Explicit quadratics ``0.5 (w - c)^T H (w - c)`` have no per-example
factorization and store full gradient vectors instead.

All objectives are normalized as averages over examples, so smoothness
constants do not grow with the dataset size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GradientStat",
    "LogisticLoss",
    "LeastSquaresLoss",
    "QuadraticObjective",
    "LinearPerturbation",
    "objective_value",
    "example_gradient",
    "full_gradient",
    "reconstruct_gradient",
    "smoothness_constants",
]


@dataclass(frozen=True)
class GradientStat:
    """Stored per-example gradient memory.

    A scalar inner derivative for GLM losses, a full data-fit gradient
    vector for explicit quadratics.
    """

    value: float | np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.value)):
            raise ValueError("non-finite gradient statistic")


def _sigmoid(z):
    # tanh form: stable for all z and identical between scalar and vector paths
    return 0.5 * (1.0 + math.tanh(0.5 * z))


def _check_w(data, w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("parameter vector must be 1-d")
    if data is not None and w.size != data.dimension:
        raise ValueError(
            f"dimension mismatch: w has {w.size}, data has {data.dimension}"
        )
    return w


def _margins(data, w):
    dense = data.dense_matrix()
    if dense is not None:
        return dense @ w
    out = np.empty(data.count)
    for i, (idx, val) in enumerate(data.feature_rows()):
        out[i] = val @ w[idx]
    return out


def _datafit_sum(data, stats):
    """Sum over examples of ``a_i * x_i`` for a vector of scalar stats."""
    dense = data.dense_matrix()
    if dense is not None:
        return dense.T @ stats
    out = np.zeros(data.dimension)
    for i, (idx, val) in enumerate(data.feature_rows()):
        out[idx] += stats[i] * val
    return out


class _GlmLoss:
    """Shared machinery for losses of the form mean_i l(x_i . w, y_i) + reg."""

    is_glm = True

    def __init__(self, lam=0.0):
        lam = float(lam)
        if lam < 0:
            raise ValueError("regularizer must be nonnegative")
        self.lam = lam

    # subclasses define: kind, curvature, stat(margin, label),
    # stat_vec(margins, labels), loss_vec(margins, labels)

    def _check_labels(self, labels):
        pass

    def value(self, data, w):
        w = _check_w(data, w)
        labels = data.labels()
        self._check_labels(labels)
        losses = self.loss_vec(_margins(data, w), labels)
        out = float(np.mean(losses))
        if self.lam:
            out += 0.5 * self.lam * float(w @ w)
        return out

    def full_gradient(self, data, w):
        w = _check_w(data, w)
        labels = data.labels()
        self._check_labels(labels)
        stats = self.stat_vec(_margins(data, w), labels)
        grad = _datafit_sum(data, stats) / data.count
        if self.lam:
            grad = grad + self.lam * w
        return grad

    def memory_stats(self, data, w):
        """Stored statistics for every example at the common point w."""
        w = _check_w(data, w)
        labels = data.labels()
        self._check_labels(labels)
        return self.stat_vec(_margins(data, w), labels)

    def smoothness(self, data):
        if data.count == 0:
            raise ValueError("empty data")
        L = self.curvature * data.max_row_norm_sq() + self.lam
        return L, self.lam

    def hessian(self, data, w):
        """Dense Hessian X^T diag(l'') X / N + lam I; desk-scale sizes only."""
        w = _check_w(data, w)
        weights = self.curvature_vec(_margins(data, w), data.labels())
        x = data.dense_matrix()
        if x is not None:
            h = (x * weights[:, None]).T @ x / data.count
        else:
            h = np.zeros((data.dimension, data.dimension))
            for i, (idx, val) in enumerate(data.feature_rows()):
                h[np.ix_(idx, idx)] += weights[i] * np.outer(val, val) / data.count
        if self.lam:
            h += self.lam * np.eye(data.dimension)
        return h

    def dense_gradient_term(self, w):
        """Gradient contribution handled outside the stored statistics."""
        return self.lam * w if self.lam else None


class LogisticLoss(_GlmLoss):
    """l2-regularized logistic regression with labels in {-1, +1}."""

    kind = "logistic"
    curvature = 0.25

    def _check_labels(self, labels):
        if not np.all(np.abs(labels) == 1.0):
            raise ValueError("logistic loss requires labels in {-1, +1}")

    def stat(self, margin, label):
        return -label * _sigmoid(-label * margin)

    def stat_vec(self, margins, labels):
        return -labels * 0.5 * (1.0 + np.tanh(-0.5 * labels * margins))

    def loss_vec(self, margins, labels):
        return np.logaddexp(0.0, -labels * margins)

    def curvature_vec(self, margins, labels):
        p = 0.5 * (1.0 + np.tanh(0.5 * margins))
        return p * (1.0 - p)


class LeastSquaresLoss(_GlmLoss):
    """l2-regularized least squares, the data-backed quadratic objective."""

    kind = "lstsq"
    curvature = 1.0

    def stat(self, margin, label):
        return margin - label

    def stat_vec(self, margins, labels):
        return margins - labels

    def loss_vec(self, margins, labels):
        return 0.5 * (margins - labels) ** 2

    def curvature_vec(self, margins, labels):
        return np.ones_like(margins)


class QuadraticObjective:
    """Explicit quadratic ``0.5 (w - center)^T matrix (w - center)``.

    The matrix must be symmetric positive definite. When driven through
    SAGA-style loops every example carries the whole quadratic, so memory
    cells hold full gradient vectors.
    """

    kind = "quadratic"
    is_glm = False
    lam = 0.0

    def __init__(self, matrix, center):
        matrix = np.asarray(matrix, dtype=np.float64)
        center = np.asarray(center, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("matrix must be square")
        if center.shape != (matrix.shape[0],):
            raise ValueError("center length must match matrix")
        if not np.allclose(matrix, matrix.T, atol=1e-12):
            raise ValueError("matrix must be symmetric")
        try:
            np.linalg.cholesky(matrix)
        except np.linalg.LinAlgError:
            raise ValueError("matrix must be positive definite") from None
        self.matrix = matrix
        self.center = center

    def _check_dims(self, data, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != self.center.shape:
            raise ValueError("dimension mismatch against quadratic matrix")
        if data is not None and data.dimension != self.center.size:
            raise ValueError("dimension mismatch between data and quadratic")
        return w

    def value(self, data, w):
        w = self._check_dims(data, w)
        diff = w - self.center
        return 0.5 * float(diff @ (self.matrix @ diff))

    def full_gradient(self, data, w):
        w = self._check_dims(data, w)
        return self.matrix @ (w - self.center)

    def smoothness(self, data):
        eigs = np.linalg.eigvalsh(self.matrix)
        return float(eigs[-1]), float(eigs[0])

    def hessian(self, data, w):
        return self.matrix

    def dense_gradient_term(self, w):
        return None


class LinearPerturbation:
    """A base objective plus the linear term ``coeff . (w - origin)``.

    The gradient gains the constant ``coeff``; per-example statistics are
    untouched, so SAGA-style loops treat the term like the regularizer.
    """

    def __init__(self, base, coeff, origin):
        coeff = np.asarray(coeff, dtype=np.float64)
        origin = np.asarray(origin, dtype=np.float64)
        if coeff.shape != origin.shape or coeff.ndim != 1:
            raise ValueError("coeff and origin must be matching 1-d vectors")
        self.base = base
        self.coeff = coeff
        self.origin = origin

    @property
    def kind(self):
        return self.base.kind

    @property
    def is_glm(self):
        return self.base.is_glm

    @property
    def lam(self):
        return self.base.lam

    def value(self, data, w):
        w = np.asarray(w, dtype=np.float64)
        return self.base.value(data, w) + float(self.coeff @ (w - self.origin))

    def full_gradient(self, data, w):
        return self.base.full_gradient(data, w) + self.coeff

    def smoothness(self, data):
        return self.base.smoothness(data)

    def hessian(self, data, w):
        return self.base.hessian(data, w)


def split_perturbation(obj):
    """Peel LinearPerturbation wrappers off, accumulating their coefficients."""
    extra = None
    while isinstance(obj, LinearPerturbation):
        extra = obj.coeff if extra is None else extra + obj.coeff
        obj = obj.base
    return obj, extra


def objective_value(obj, data, w):
    return obj.value(data, w)


def full_gradient(obj, data, w):
    return obj.full_gradient(data, w)


def smoothness_constants(obj, data):
    return obj.smoothness(data)


def example_gradient(obj, example, w):
    """The stored statistic for one example at w."""
    base, _ = split_perturbation(obj)
    w = np.asarray(w, dtype=np.float64)
    if base.is_glm:
        margin = float(example.values @ w[example.indices])
        return GradientStat(base.stat(margin, example.label))
    return GradientStat(base.matrix @ (w - base.center))


def reconstruct_gradient(obj, example, stat, w):
    """Rebuild the full per-example gradient from a stored statistic."""
    base, extra = split_perturbation(obj)
    w = np.asarray(w, dtype=np.float64)
    if isinstance(stat, GradientStat):
        stat = stat.value
    if base.is_glm:
        grad = np.zeros_like(w)
        grad[example.indices] = stat * example.values
        if base.lam:
            grad += base.lam * w
    else:
        grad = np.array(stat, dtype=np.float64)
    if extra is not None:
        grad = grad + extra
    return grad
