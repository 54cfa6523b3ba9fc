"""Discrete probability space over collocation samples.

All stochastic inner products are realized by an empirical measure with
positive weights summing to one.  Provides mean/fluctuation splitting,
projection onto the orthogonal complement of a stochastic basis, and a
weighted orthonormalization used after every time step.
"""

import io

import numpy as np

from .errors import ConfigError, RankLossError

__all__ = [
    "SampleSpace",
    "expectation",
    "inner",
    "split_mean",
    "project_complement",
    "weighted_orthonormalize",
    "make_tensor_grid",
    "make_monte_carlo",
    "save_sample_space",
    "load_sample_space",
]

ORTHO_TOL = 1e-8
RANK_TOL = 1e-12


class SampleSpace:
    """Collocation points with positive weights summing to 1.

    samples : (N_C, p) array of parameter vectors
    weights : (N_C,) array, strictly positive, sum 1 within 1e-14
    """

    def __init__(self, samples, weights):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        weights = np.asarray(weights, dtype=float)
        if samples.shape[0] != len(weights):
            raise ConfigError("sample and weight counts differ")
        if len(weights) < 1:
            raise ConfigError("need at least one sample")
        if np.any(weights <= 0):
            raise ConfigError("weights must be strictly positive")
        if abs(weights.sum() - 1.0) > 1e-14:
            raise ConfigError("weights must sum to 1")
        self.samples = samples
        self.weights = weights

    @property
    def count(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.samples.shape[1]


def _check_len(Z, space):
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] != space.count:
        raise ConfigError(
            f"random vector length {Z.shape[0]} != sample count {space.count}")
    return Z


def expectation(Z, space):
    """Weighted mean sum_i m_i Z_i.  Z may have trailing axes."""
    Z = _check_len(Z, space)
    return np.tensordot(space.weights, Z, axes=(0, 0))


def inner(Y, Z, space):
    """Weighted inner product sum_i m_i Y_i Z_i."""
    Y = _check_len(Y, space)
    Z = _check_len(Z, space)
    return float(np.dot(space.weights * Y, Z))


def split_mean(Z, space):
    """Split into (mean, zero-mean fluctuation)."""
    Z = _check_len(Z, space)
    mean = float(expectation(Z, space))
    return mean, Z - mean


def _gram(Y, space):
    return (Y * space.weights[:, None]).T @ Y


def project_complement(z, Y, space):
    """Project z onto the complement of span{1, Y_1..Y_R}.

    Y : (N_C, R) with orthonormal zero-mean columns.  The result is
    zero-mean and orthogonal to every column.
    """
    z = _check_len(z, space)
    Y = np.asarray(Y, dtype=float)
    if Y.size:
        Y = _check_len(Y, space)
        g = _gram(Y, space)
        if np.max(np.abs(g - np.eye(Y.shape[1]))) > ORTHO_TOL:
            raise ConfigError("basis is not orthonormal in the weighted product")
        means = expectation(Y, space)
        if np.max(np.abs(means)) > ORTHO_TOL:
            raise ConfigError("basis is not zero-mean")
    _, zf = split_mean(z, space)
    if Y.size:
        coeffs = expectation(Y * zf[:, None], space)
        zf = zf - Y @ coeffs
    return zf


def weighted_orthonormalize(Y_tilde, space):
    """Weighted modified Gram-Schmidt with one reorthogonalization pass.

    Returns (Y, T) with orthonormal columns Y, upper triangular T with
    positive diagonal, and Y_tilde = Y @ T.  Raises RankLossError when a
    pivot falls below RANK_TOL relative to the largest column norm.
    """
    Yt = np.atleast_2d(np.asarray(Y_tilde, dtype=float))
    Yt = _check_len(Yt, space)
    n, r = Yt.shape
    Y = np.empty((n, r))
    T = np.zeros((r, r))
    w = space.weights
    col_scale = max(np.sqrt(inner(Yt[:, j], Yt[:, j], space))
                    for j in range(r)) if r else 1.0
    for j in range(r):
        v = Yt[:, j].copy()
        for _ in range(2):                  # MGS + one reorthogonalization
            for i in range(j):
                h = float(np.dot(w * Y[:, i], v))
                T[i, j] += h
                v -= h * Y[:, i]
        norm = np.sqrt(float(np.dot(w * v, v)))
        if norm <= RANK_TOL * max(col_scale, 1e-300):
            raise RankLossError(
                f"rank deficiency at column {j} (pivot {norm:.3e})",
                numerical_rank=j)
        T[j, j] = norm
        Y[:, j] = v / norm
    return Y, T


def _uniform_weights(n):
    w = np.full(n, 1.0 / n)
    return w / w.sum()


def make_tensor_grid(intervals):
    """Full tensor grid of equispaced points, equal weights.

    intervals : list of (a, b, N) per axis; N=1 places the midpoint.
    """
    if not intervals:
        raise ConfigError("empty axis list")
    axes = []
    for a, b, N in intervals:
        N = int(N)
        if N < 1:
            raise ConfigError("need N >= 1 points per axis")
        if N == 1:
            axes.append(np.array([0.5 * (a + b)]))
        else:
            axes.append(np.linspace(a, b, N))
    grids = np.meshgrid(*axes, indexing="ij")
    samples = np.column_stack([g.ravel() for g in grids])
    return SampleSpace(samples, _uniform_weights(samples.shape[0]))


def make_monte_carlo(intervals, n_samples, seed):
    """Uniform independent samples on a box, equal weights, seeded."""
    n = int(n_samples)
    if n < 1:
        raise ConfigError("need at least one sample")
    if not intervals:
        raise ConfigError("empty axis list")
    rng = np.random.default_rng(seed)
    lo = np.array([a for a, _ in intervals])
    hi = np.array([b for _, b in intervals])
    samples = rng.uniform(lo, hi, size=(n, len(intervals)))
    return SampleSpace(samples, _uniform_weights(n))


def save_sample_space(space, path_or_file):
    """Write the plain text table: header `N_C p`, rows `m_i w_i1 ... w_ip`."""
    rows = np.column_stack([space.weights, space.samples])
    header = f"{space.count} {space.dim}"
    body = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in rows)
    text = header + "\n" + body + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)


def load_sample_space(path_or_file):
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as fh:
            text = fh.read()
    lines = text.strip().splitlines()
    n, p = (int(v) for v in lines[0].split())
    data = np.loadtxt(io.StringIO("\n".join(lines[1:]))).reshape(n, p + 1)
    return SampleSpace(data[:, 1:], data[:, 0])
