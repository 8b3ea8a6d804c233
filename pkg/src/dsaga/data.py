"""Sparse labelled datasets: LIBSVM text ingestion, synthetic Gaussian
sampling and deterministic sharding for the cluster simulator.

Feature indices are 0-based in memory and 1-based on the wire (LIBSVM
convention). Datasets, shards and examples are treated as immutable after
construction and can be shared freely between threads.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Example",
    "Dataset",
    "Shard",
    "ParseError",
    "parse_libsvm",
    "dump_libsvm",
    "generate_gaussian",
    "partition",
]

# Dense design matrices are cached only below this element count; larger
# data falls back to per-row sparse arithmetic.
_DENSE_CACHE_LIMIT = 50_000_000

# Seed-stream salts keep the permutation / sampling streams disjoint from
# the per-node SAGA streams, which use small node ids as the second word.
_PARTITION_SALT = 28769
_GAUSSIAN_SALT = 26465


class ParseError(ValueError):
    """Malformed LIBSVM input; ``line_no`` is 1-based."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class Example:
    """A single labelled point with a sorted sparse feature vector.

    ``indices`` must be strictly increasing and all values finite; both
    arrays are frozen after construction.
    """

    __slots__ = ("label", "indices", "values")

    def __init__(self, label, indices, values):
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if indices.ndim != 1 or indices.shape != values.shape:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if indices.size:
            if int(indices[0]) < 0:
                raise ValueError("negative feature index")
            if indices.size > 1 and not np.all(np.diff(indices) > 0):
                raise ValueError("feature indices must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite feature value")
        label = float(label)
        if not np.isfinite(label):
            raise ValueError("non-finite label")
        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("Example is immutable")

    def max_index(self):
        return int(self.indices[-1]) if self.indices.size else -1

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        pairs = " ".join(f"{i}:{v}" for i, v in zip(self.indices, self.values))
        return f"Example({self.label}, {{{pairs}}})"


class Dataset:
    """An ordered collection of examples in a fixed ambient dimension."""

    def __init__(self, examples, dimension=None):
        examples = list(examples)
        needed = 1 + max((ex.max_index() for ex in examples), default=-1)
        if dimension is None:
            dimension = max(needed, 1)
        dimension = int(dimension)
        if dimension < 1:
            raise ValueError("dimension must be positive")
        if dimension < needed:
            raise ValueError(
                f"dimension {dimension} too small for max feature index {needed - 1}"
            )
        self.examples = examples
        self.dimension = dimension
        self._labels = None
        self._rows = None
        self._dense = None
        self._max_row_norm_sq = None

    @property
    def count(self):
        return len(self.examples)

    def __len__(self):
        return len(self.examples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.dimension == other.dimension and self.examples == other.examples

    def labels(self):
        if self._labels is None:
            lab = np.array([ex.label for ex in self.examples], dtype=np.float64)
            lab.setflags(write=False)
            self._labels = lab
        return self._labels

    def feature_rows(self):
        """Per-example (indices, values) views for the sampling kernels."""
        if self._rows is None:
            self._rows = [(ex.indices, ex.values) for ex in self.examples]
        return self._rows

    def dense_matrix(self):
        """Dense (count, dimension) design matrix, or None above the cache limit."""
        if self.count * self.dimension > _DENSE_CACHE_LIMIT:
            return None
        if self._dense is None:
            mat = np.zeros((self.count, self.dimension))
            for i, ex in enumerate(self.examples):
                mat[i, ex.indices] = ex.values
            mat.setflags(write=False)
            self._dense = mat
        return self._dense

    def max_row_norm_sq(self):
        if self._max_row_norm_sq is None:
            best = 0.0
            for ex in self.examples:
                best = max(best, float(ex.values @ ex.values))
            self._max_row_norm_sq = best
        return self._max_row_norm_sq


class Shard(Dataset):
    """One node's slice of a dataset; sizes across a partition differ by <= 1."""

    def __init__(self, node_id, examples, dimension=None):
        super().__init__(examples, dimension)
        self.node_id = int(node_id)

    @property
    def local_count(self):
        return self.count


def _parse_line(line_no, line):
    tokens = line.split()
    try:
        label = float(tokens[0])
    except ValueError:
        raise ParseError(line_no, f"bad label {tokens[0]!r}") from None
    if not np.isfinite(label):
        raise ParseError(line_no, f"non-finite label {tokens[0]!r}")
    indices = []
    values = []
    prev = 0  # wire indices are 1-based
    for tok in tokens[1:]:
        idx_s, sep, val_s = tok.partition(":")
        if not sep:
            raise ParseError(line_no, f"bad feature token {tok!r}")
        try:
            idx = int(idx_s)
            val = float(val_s)
        except ValueError:
            raise ParseError(line_no, f"bad feature token {tok!r}") from None
        if idx < 1:
            raise ParseError(line_no, f"feature index {idx} is not >= 1")
        if idx <= prev:
            raise ParseError(line_no, f"non-increasing feature index {idx}")
        if not np.isfinite(val):
            raise ParseError(line_no, f"non-finite value in token {tok!r}")
        prev = idx
        indices.append(idx - 1)
        values.append(val)
    return Example(label, indices, values)


def parse_libsvm(text, dimension=None):
    """Parse LIBSVM-format text (a string or text file object) into a Dataset.

    Each nonempty line is ``<label> <idx>:<val> <idx>:<val> ...`` with 1-based,
    strictly increasing indices. ``#`` starts a comment running to end of line;
    blank lines are skipped; LF and CRLF both accepted.
    """
    if hasattr(text, "read"):
        text = text.read()
    examples = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        examples.append(_parse_line(line_no, line))
    return Dataset(examples, dimension)


def dump_libsvm(dataset):
    """Serialize a Dataset back to LIBSVM text (1-based indices, LF endings)."""
    lines = []
    for ex in dataset.examples:
        parts = [repr(ex.label)]
        parts.extend(f"{int(i) + 1}:{repr(float(v))}" for i, v in zip(ex.indices, ex.values))
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def _covariance_factor(covariance, d):
    """Lower-triangular factor L with L L^T = covariance; validates PD."""
    if isinstance(covariance, str):
        if covariance != "identity":
            raise ValueError(f"unknown covariance spec {covariance!r}")
        return None
    cov = np.asarray(covariance, dtype=np.float64)
    if cov.ndim == 1:
        if cov.shape != (d,):
            raise ValueError("diagonal covariance must have length d")
        if np.any(cov <= 0):
            raise ValueError("covariance not positive definite")
        return np.sqrt(cov)  # 1-d factor, applied elementwise
    if cov.shape != (d, d):
        raise ValueError("covariance matrix must be d x d")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance matrix must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("covariance not positive definite") from None


def generate_gaussian(n, d, covariance="identity", seed=0, labeler=None):
    """Sample ``n`` centred Gaussian points in dimension ``d``.

    ``covariance`` is "identity", a length-d diagonal, or a dense PD matrix.
    Labels default to +1 (quadratic losses ignore them); ``labeler(X, rng)``
    may supply a label vector instead. Bit-reproducible for a fixed seed.
    """
    n = int(n)
    d = int(d)
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    factor = _covariance_factor(covariance, d)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _GAUSSIAN_SALT])))
    u = rng.standard_normal((n, d))
    if factor is None:
        x = u
    elif factor.ndim == 1:
        x = u * factor
    else:
        x = u @ factor.T
    if labeler is None:
        labels = np.ones(n)
    else:
        labels = np.asarray(labeler(x, rng), dtype=np.float64)
        if labels.shape != (n,):
            raise ValueError("labeler must return one label per example")
    idx = np.arange(d)
    examples = [Example(labels[i], idx, x[i]) for i in range(n)]
    return Dataset(examples, dimension=d)


def partition(dataset, nodes, seed=0):
    """Split a dataset into ``nodes`` shards: seeded permutation, then
    contiguous blocks whose sizes differ by at most one."""
    k = int(nodes)
    n = dataset.count
    if k < 1:
        raise ValueError("node count must be >= 1")
    if k > n:
        raise ValueError(f"cannot split {n} examples across {k} nodes")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _PARTITION_SALT])))
    order = rng.permutation(n)
    base, extra = divmod(n, k)
    shards = []
    start = 0
    for node_id in range(k):
        size = base + (1 if node_id < extra else 0)
        chosen = order[start : start + size]
        shards.append(
            Shard(node_id, [dataset.examples[i] for i in chosen], dataset.dimension)
        )
        start += size
    return shards
