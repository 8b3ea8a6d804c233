import numpy as np
import pytest

from dsaga.data import Dataset, Example, Shard, generate_gaussian
from dsaga.losses import LeastSquaresLoss, LogisticLoss, QuadraticObjective


def sign_labeler(x, rng):
    plant = rng.standard_normal(x.shape[1])
    return np.where(x @ plant >= 0, 1.0, -1.0)


def make_logistic_problem(n=200, d=8, lam=0.05, seed=3, var=1.0):
    cov = "identity" if var == 1.0 else np.full(d, var)
    data = generate_gaussian(n, d, cov, seed=seed, labeler=sign_labeler)
    return LogisticLoss(lam), data


def make_lstsq_problem(n=200, d=6, lam=0.0, seed=4, noise=0.3):
    def labeler(x, rng):
        plant = rng.standard_normal(x.shape[1])
        return x @ plant + noise * rng.standard_normal(len(x))

    data = generate_gaussian(n, d, seed=seed, labeler=labeler)
    return LeastSquaresLoss(lam), data


def random_quadratic(d=5, seed=0, lo=1.0, hi=4.0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigs = rng.uniform(lo, hi, size=d)
    matrix = q @ np.diag(eigs) @ q.T
    return QuadraticObjective(matrix, rng.standard_normal(d))


def placeholder_dataset(n, d):
    """Examples with no features; carries only a count for sampling loops."""
    return Dataset([Example(1.0, [], []) for _ in range(n)], dimension=d)


def two_node_scalar_shards():
    """1-d pair with local curvatures 1 and 2 and minimizers 0 and 3.

    Least-squares examples chosen so each node-average loss is exactly
    0.5 * h_k * (w - c_k)^2; the global optimum is w = 2.
    """
    ex1 = Example(0.0, [0], [1.0])
    ex2 = Example(3.0 * np.sqrt(2.0), [0], [np.sqrt(2.0)])
    return [Shard(0, [ex1]), Shard(1, [ex2])]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
