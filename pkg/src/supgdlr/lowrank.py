"""Two-factor low-rank representation of a random nodal field.

The field is u = U0 * 1 + sum_i U_i Y_i with deterministic modes U_i,
orthonormal zero-mean stochastic modes Y_i, and a mean mode U0 that
carries any non-homogeneous Dirichlet data.
"""

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError
from .sampling import expectation, weighted_orthonormalize

__all__ = [
    "DlrState",
    "SkewedGram",
    "init_from_modes",
    "init_from_snapshot",
    "evaluate_realization",
    "skewed_gram",
    "save_state",
    "load_state",
]


class DlrState:
    """Low-rank state (U0, U, Y, t); immutable between time steps.

    U0 : (N_h,) mean mode
    U  : (N_h, R) deterministic modes, linearly independent
    Y  : (N_C, R) stochastic modes, orthonormal and zero-mean in the
         weighted inner product
    """

    def __init__(self, U0, U, Y, t=0.0):
        self.U0 = np.asarray(U0, dtype=float)
        self.U = np.asarray(U, dtype=float).reshape(len(self.U0), -1)
        self.Y = np.asarray(Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y.reshape(-1, self.U.shape[1])
        self.t = float(t)
        if self.U.shape[1] != self.Y.shape[1]:
            raise ConfigError("deterministic and stochastic ranks differ")

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def n_dof(self):
        return len(self.U0)

    @property
    def n_samples(self):
        return self.Y.shape[0]

    def dense(self):
        """All realizations as columns, (N_h, N_C)."""
        return self.U0[:, None] + self.U @ self.Y.T

    def validate(self, space, mass, gram_tol=1e-10, cond_tol=1e-12):
        """Check the manifold invariants; raises ConfigError on failure."""
        if self.rank:
            g = (self.Y * space.weights[:, None]).T @ self.Y
            if np.max(np.abs(g - np.eye(self.rank))) > gram_tol:
                raise ConfigError("stochastic modes are not orthonormal")
            if np.max(np.abs(expectation(self.Y, space))) > gram_tol:
                raise ConfigError("stochastic modes are not zero-mean")
            gu = self.U.T @ (mass @ self.U)
            sv = np.linalg.svd(gu, compute_uv=False)
            if sv[-1] < cond_tol * sv[0]:
                raise ConfigError("deterministic modes nearly dependent")
        return self


def init_from_modes(U0, U, Y, space):
    """Build a valid state from raw factor matrices.

    The stochastic modes are centered (the removed means fold into U0)
    and orthonormalized, with the transfer matrix absorbed into U, so
    the represented field is unchanged.
    """
    U0 = np.asarray(U0, dtype=float).copy()
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[0] != len(U0):
        U = U.T
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if Y.shape[0] != space.count:
        raise ConfigError("stochastic modes sized unlike the sample space")
    if U.shape[1] != Y.shape[1]:
        raise ConfigError("mode counts differ")

    means = expectation(Y, space)
    U0 += U @ means
    Yc = Y - means
    Yo, T = weighted_orthonormalize(Yc, space)
    return DlrState(U0, U @ T.T, Yo)


def init_from_snapshot(u_samples, mass, space, R=None, tol=None):
    """Low-rank factorization of a snapshot under the natural norms.

    Generalized SVD by symmetric scaling: Cholesky-factor the mass
    matrix, scale sample columns by sqrt(m_i), then run a dense SVD.
    Truncation is at fixed rank R or at the smallest rank whose relative
    singular-value tail is below tol.
    """
    X = np.asarray(u_samples, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ConfigError("snapshot contains non-finite values")
    if X.shape[1] != space.count:
        raise ConfigError("snapshot columns must match the sample count")
    if R is None and tol is None:
        raise ConfigError("give a rank or a truncation tolerance")

    mean = X @ space.weights
    Xc = X - mean[:, None]
    Mdense = mass.toarray() if hasattr(mass, "toarray") else np.asarray(mass)
    L = sla.cholesky(Mdense, lower=True)
    sw = np.sqrt(space.weights)
    Xs = L.T @ (Xc * sw[None, :])
    P, s, QT = np.linalg.svd(Xs, full_matrices=False)

    nnz = int(np.sum(s > 1e-14 * (s[0] if len(s) else 1.0)))
    if R is not None:
        R = int(R)
        if R > min(X.shape):
            raise ConfigError("requested rank exceeds snapshot size")
        r = min(R, nnz)
    else:
        total = float(np.sum(s ** 2))
        r = nnz
        if total > 0:
            for k in range(nnz + 1):
                tail = np.sqrt(np.sum(s[k:] ** 2) / total)
                if tail <= tol:
                    r = k
                    break
            else:
                raise ConfigError("truncation tolerance unachievable")
        else:
            r = 0

    if r == 0:
        N_h = X.shape[0]
        return DlrState(mean, np.zeros((N_h, 0)),
                        np.zeros((space.count, 0)))
    U = sla.solve_triangular(L.T, P[:, :r] * s[:r], lower=False)
    Y = (QT[:r].T / sw[:, None])
    return DlrState(mean, U, Y)


def evaluate_realization(state, i):
    """Nodal field of realization i: U0 + U @ Y[i]."""
    if not 0 <= i < state.n_samples:
        raise ConfigError(f"sample index {i} out of range")
    if state.rank == 0:
        return state.U0.copy()
    return state.U0 + state.U @ state.Y[i]


class SkewedGram:
    """Gram matrix of modes under the streamline-skewed pairing."""

    def __init__(self, W, condition):
        self.W = W
        self.condition = condition


def skewed_gram(U_tilde, blocks):
    """W_ij = <U_i, U_j> + sum_K delta_K <U_i, b.grad U_j>_K."""
    Ut = np.atleast_2d(np.asarray(U_tilde, dtype=float))
    W = Ut.T @ ((blocks.mass + blocks.supg_mass.T) @ Ut)
    cond = np.linalg.cond(W) if W.size else 1.0
    return SkewedGram(W, float(cond))


def save_state(state, path, n_per_side=None):
    """Checkpoint (t, R, U0, U, Y) to an npz file; bit-exact round trip."""
    np.savez(path, t=state.t, rank=state.rank, U0=state.U0, U=state.U,
             Y=state.Y, n_per_side=-1 if n_per_side is None else n_per_side,
             n_samples=state.n_samples)


def load_state(path):
    with np.load(path) as data:
        return DlrState(data["U0"], data["U"], data["Y"],
                        t=float(data["t"]))
