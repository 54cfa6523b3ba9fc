"""Random coefficient fields and the scalar analysis quantities.

A CoefficientModel bundles the diffusion, advection, reaction and
forcing fields in mean + fluctuation form.  The analysis operations
derive everything the stability theory consumes: the shifted reaction
field and its infimum, element sup-norms of the reaction, the
stabilization parameter policies, the local Peclet number and the
inverse-inequality constant.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError
from .mesh import default_quadrature

__all__ = [
    "CoefficientModel",
    "ReactionAnalysis",
    "StabilizationParams",
    "rotating_body",
    "boundary_layer",
    "constant_adr",
    "analyze_reaction",
    "estimate_inverse_constant",
    "delta_coercivity",
    "delta_semi_implicit",
    "delta_experiment",
    "local_peclet",
    "check_moderate_stochasticity",
]


@dataclass
class CoefficientModel:
    """Coefficient fields of the random advection-diffusion-reaction problem.

    eps      : callable (N,p) samples -> (N,) positive diffusion values
    b_mean   : callable (n,2) points -> (n,2) mean advection
    b_fluct  : None or callable (points, omega) -> (n,2) zero-mean part
    c_mean   : None or callable points -> (n,) mean reaction
    c_fluct  : None or callable (points, omega) -> (n,) zero-mean part
    div_b    : callable (points, omega) -> (n,), analytic divergence of
               the full advection field (never obtained by differencing)
    forcing  : None or callable (t, points, omega) -> (n,)
    forcing_deterministic : True when forcing ignores omega
    div_b_random : True when div_b actually depends on omega
    """

    name: str
    eps: callable
    b_mean: callable
    b_fluct: callable = None
    c_mean: callable = None
    c_fluct: callable = None
    div_b: callable = None
    forcing: callable = None
    forcing_deterministic: bool = True
    div_b_random: bool = False
    param_dim: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.div_b is None:
            self.div_b = lambda x, omega: np.zeros(len(x))

    # -- sample-wise accessors -------------------------------------------

    def eps_values(self, space):
        vals = np.asarray(self.eps(space.samples), dtype=float)
        if vals.shape != (space.count,):
            raise ConfigError("eps must return one value per sample")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ConfigError("diffusion values must be finite and positive")
        return vals

    def eps_split(self, space):
        """Mean diffusion and per-sample fluctuation (eps_bar, eps_star)."""
        vals = self.eps_values(space)
        bar = float(np.dot(space.weights, vals))
        return bar, vals - bar

    def eps_bounds(self, space):
        """(eps_hat, C_E) with eps_hat <= eps <= C_E eps_hat."""
        vals = self.eps_values(space)
        eps_hat = float(vals.min())
        return eps_hat, float(vals.max() / eps_hat)

    def b_at(self, x, omega=None):
        b = np.asarray(self.b_mean(x), dtype=float)
        if omega is not None and self.b_fluct is not None:
            b = b + np.asarray(self.b_fluct(x, omega), dtype=float)
        return b

    def c_at(self, x, omega=None):
        c = np.zeros(len(x))
        if self.c_mean is not None:
            c = c + np.asarray(self.c_mean(x), dtype=float)
        if omega is not None and self.c_fluct is not None:
            c = c + np.asarray(self.c_fluct(x, omega), dtype=float)
        return c

    @property
    def has_random_advection(self):
        return self.b_fluct is not None

    @property
    def has_random_reaction(self):
        return self.c_fluct is not None

    def validate(self, space, mesh, quad=None):
        """Check positivity of eps and zero-mean advection fluctuation."""
        self.eps_bounds(space)
        if self.b_fluct is not None:
            quad = quad or default_quadrature()
            xq = mesh.quad_points(quad).reshape(-1, 2)
            acc = np.zeros((len(xq), 2))
            for m, omega in zip(space.weights, space.samples):
                acc += m * np.asarray(self.b_fluct(xq, omega), dtype=float)
            if np.max(np.abs(acc)) > 1e-10:
                raise ConfigError("advection fluctuation is not zero-mean")
        return self


@dataclass
class ReactionAnalysis:
    """Shifted reaction field and associated scalars.

    mu_tilde(x, omega) = c - |c|/2 - div(b)/2, mu = mu_tilde + nu >= 0,
    nu = -min(inf mu_tilde, 0), mu0 = inf mu.  Infima and element
    sup-norms come from an exhaustive scan over quadrature points and
    collocation samples, which is all the discrete problem ever sees.
    """

    mu_tilde: callable
    nu: float
    mu: callable
    mu0: float
    c_sup_K: np.ndarray
    eps_star_sup: float
    eps_hat: float
    C_E: float
    n_scan_points: int
    reaction_random: bool


class StabilizationParams:
    """Per-element stabilization parameter with provenance.

    delta_K may contain +inf entries when every constraint of the
    policy is inactive; the caller must cap those (the runner caps with
    the h_K/4 policy by default).
    """

    def __init__(self, delta_K, policy, C_I=None, C_E=None, d=2):
        self.delta_K = np.asarray(delta_K, dtype=float)
        self.policy = policy
        self.C_I = C_I
        self.C_E = C_E
        self.d = d
        if np.any(self.delta_K < 0):
            raise ConfigError("delta_K must be nonnegative")

    def capped(self, cap_delta_K):
        """Replace +inf entries with the given per-element cap."""
        out = np.minimum(self.delta_K, cap_delta_K)
        return StabilizationParams(out, self.policy + "+cap",
                                   self.C_I, self.C_E, self.d)


def _scan_samples(model, space):
    """Sample iterator for reaction scans; collapses when nothing varies."""
    if model.has_random_reaction or model.div_b_random:
        return list(zip(space.weights, space.samples))
    return [(1.0, space.samples[0])]


def analyze_reaction(model, mesh, space, quad=None):
    quad = quad or default_quadrature()
    xq = mesh.quad_points(quad)
    flat = xq.reshape(-1, 2)
    ne, nq = xq.shape[0], xq.shape[1]

    def mu_tilde(x, omega):
        c = model.c_at(x, omega)
        div = np.asarray(model.div_b(x, omega), dtype=float)
        return c - 0.5 * np.abs(c) - 0.5 * div

    mt_min = np.inf
    c_sup_K = np.zeros(ne)
    n_scan = 0
    for _, omega in _scan_samples(model, space):
        mt = mu_tilde(flat, omega)
        c = model.c_at(flat, omega)
        if not np.all(np.isfinite(mt)):
            raise ConfigError("reaction analysis hit non-finite values")
        mt_min = min(mt_min, float(mt.min()))
        c_sup_K = np.maximum(c_sup_K, np.abs(c).reshape(ne, nq).max(axis=1))
        n_scan += len(flat)

    nu = max(-min(mt_min, 0.0), 0.0)

    def mu(x, omega):
        return mu_tilde(x, omega) + nu

    mu0 = mt_min + nu
    if mu0 < -1e-12:
        raise ConfigError("shifted reaction came out negative")
    mu0 = max(mu0, 0.0)

    eps_hat, C_E = model.eps_bounds(space)
    _, eps_star = model.eps_split(space)
    return ReactionAnalysis(
        mu_tilde=mu_tilde, nu=nu, mu=mu, mu0=mu0, c_sup_K=c_sup_K,
        eps_star_sup=float(np.max(np.abs(eps_star))),
        eps_hat=eps_hat, C_E=C_E, n_scan_points=n_scan,
        reaction_random=model.has_random_reaction or model.div_b_random)


def estimate_inverse_constant(mesh, blocks, max_iter=5000, tol=1e-10,
                              seed=0):
    """Inverse-inequality constant C_I with grad-norm <= (C_I/h) L2-norm.

    C_I = h sqrt(lambda_max) where lambda_max is the largest generalized
    eigenvalue of (stiffness, mass) restricted to interior nodes, found
    by power iteration on the mass-preconditioned stiffness.
    """
    interior = mesh.interior_index()
    A = blocks.stiffness[np.ix_(interior, interior)].tocsc()
    M = blocks.mass[np.ix_(interior, interior)].tocsc()
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(len(interior))
    try:
        lam = spla.eigsh(A, k=1, M=M, which="LA", v0=v0,
                         maxiter=max_iter, tol=tol,
                         return_eigenvectors=False)
    except spla.ArpackNoConvergence as err:
        raise SolverError("largest generalized eigenvalue for the "
                          "inverse constant did not converge") from err
    # small inflation so random Rayleigh quotients stay below
    return mesh.h * np.sqrt(float(lam[0]) * (1.0 + 1e-6))


def delta_coercivity(mesh, analysis, params, drop_p1_diffusion=False):
    """Largest delta_K admitted by the weak-coercivity lemma.

    Per element the minimum of 1/(2 |||c|||_K) and
    h_K^2/(2 d C_I^2 C_E^2 eps_hat).  The diffusion constraint may be
    dropped for piecewise-linear elements (flag, default keep).  When
    every active constraint is infinite the entry is +inf and must be
    capped by the caller.
    """
    with np.errstate(divide="ignore"):
        b1 = np.where(analysis.c_sup_K > 0,
                      1.0 / (2.0 * analysis.c_sup_K), np.inf)
    if drop_p1_diffusion:
        dk = b1
    else:
        if params.C_I is None:
            raise ConfigError("diffusion constraint needs C_I")
        b2 = mesh.h_K ** 2 / (2.0 * params.d * params.C_I ** 2
                              * analysis.C_E ** 2 * analysis.eps_hat)
        dk = np.minimum(b1, b2)
    return StabilizationParams(dk, "coercivity", params.C_I,
                               analysis.C_E, params.d)


def delta_semi_implicit(mesh, analysis, params, dt):
    """delta_K bound guaranteeing semi-implicit norm stability."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if params.C_I is None:
        raise ConfigError("semi-implicit bound needs C_I")
    with np.errstate(divide="ignore"):
        b1 = np.where(analysis.c_sup_K > 0,
                      1.0 / (2.0 * analysis.c_sup_K), np.inf)
    b2 = mesh.h_K ** 2 / (2.0 * analysis.eps_hat * params.C_I ** 2
                          * max(analysis.C_E ** 2, 1.0) * params.d)
    b3 = np.full_like(b1, 2.0 * dt)
    dk = 0.125 * np.minimum(np.minimum(b1, b2), b3)
    return StabilizationParams(dk, "semi_implicit", params.C_I,
                               analysis.C_E, params.d)


def delta_experiment(mesh):
    """The h_K/4 policy used by the experiment presets."""
    return StabilizationParams(mesh.h_K / 4.0, "experiment")


@dataclass
class PecletReport:
    peclet: np.ndarray            # (n_elements, N_C) per-sample maxima
    advection_dominated: bool
    max_peclet: float


def local_peclet(model, mesh, space, quad=None):
    """Per-element, per-sample local Peclet maxima |b| h_K / (2 eps)."""
    quad = quad or default_quadrature()
    xq = mesh.quad_points(quad)
    flat = xq.reshape(-1, 2)
    ne, nq = xq.shape[0], xq.shape[1]
    eps = model.eps_values(space)

    if not model.has_random_advection:
        bn = np.linalg.norm(model.b_at(flat), axis=1).reshape(ne, nq)
        bmax = bn.max(axis=1)
        pe = np.outer(bmax * mesh.h_K, 0.5 / eps)
    else:
        pe = np.empty((ne, space.count))
        for i, omega in enumerate(space.samples):
            bn = np.linalg.norm(model.b_at(flat, omega), axis=1)
            bmax = bn.reshape(ne, nq).max(axis=1)
            pe[:, i] = bmax * mesh.h_K / (2.0 * eps[i])
    mx = float(pe.max())
    return PecletReport(pe, mx > 1.0, mx)


@dataclass
class StochasticityReport:
    eps_ok: bool
    eps_margin: float
    c_ok: bool
    c_margin: float

    @property
    def ok(self):
        return self.eps_ok and self.c_ok


def check_moderate_stochasticity(model, analysis, space, mesh, quad=None):
    """Verify |eps_star| <= eps_hat/32 and |c_star| <= mu/32.

    Margins are the worst-case slack over samples (and quadrature points
    for the reaction); deterministic coefficients give infinite margin.
    """
    _, eps_star = model.eps_split(space)
    if np.max(np.abs(eps_star)) <= 1e-14 * analysis.eps_hat:
        eps_margin = np.inf
    else:
        eps_margin = float(np.min(analysis.eps_hat / 32.0
                                  - np.abs(eps_star)))
    eps_ok = eps_margin >= 0

    if model.c_fluct is None:
        c_margin, c_ok = np.inf, True
    else:
        quad = quad or default_quadrature()
        flat = mesh.quad_points(quad).reshape(-1, 2)
        c_margin = np.inf
        for omega in space.samples:
            cs = np.asarray(model.c_fluct(flat, omega), dtype=float)
            slack = analysis.mu(flat, omega) / 32.0 - np.abs(cs)
            c_margin = min(c_margin, float(slack.min()))
        c_ok = c_margin >= 0
    return StochasticityReport(eps_ok, eps_margin, c_ok, c_margin)


# -- built-in models -----------------------------------------------------

def rotating_body():
    """Rigid-rotation transport with a log-uniform random diffusion.

    Parameters y in [-1,1]^3; eps(y) = 10^(y1 - 16); the advection
    rotates about (0.5, 0.5) and is divergence free; no reaction.
    """
    def eps(samples):
        return 10.0 ** (np.atleast_2d(samples)[:, 0] - 16.0)

    def b_mean(x):
        return np.column_stack([0.5 - x[:, 1], x[:, 0] - 0.5])

    return CoefficientModel(name="rotating_body", eps=eps, b_mean=b_mean,
                            param_dim=3)


def boundary_layer(space):
    """Skew advection toward the top-right corner, random strength.

    Parameters y in [5000,6000] x [-1,1]^3; eps = 1/y1; the advection is
    (1,1) plus (y2 - k)(x2, x1) with k the weighted mean of y2, so the
    fluctuation is zero-mean by construction and divergence free.
    """
    k = float(np.dot(space.weights, space.samples[:, 1]))

    def eps(samples):
        return 1.0 / np.atleast_2d(samples)[:, 0]

    def b_mean(x):
        return np.ones((len(x), 2))

    def b_fluct(x, omega):
        return (omega[1] - k) * np.column_stack([x[:, 1], x[:, 0]])

    return CoefficientModel(name="boundary_layer", eps=eps, b_mean=b_mean,
                            b_fluct=b_fluct, param_dim=4,
                            params={"k": k})


def constant_adr(eps_value=1.0, b=(1.0, 0.0), c=0.0, f=None,
                 eps_fn=None, param_dim=1):
    """Constant-coefficient model; eps_fn overrides the scalar diffusion.

    f may be a constant or a callable (t, points) -> (n,); it is always
    deterministic here.
    """
    if eps_fn is None:
        def eps(samples):
            return np.full(len(np.atleast_2d(samples)), float(eps_value))
    else:
        eps = eps_fn

    bvec = np.asarray(b, dtype=float)

    def b_mean(x):
        return np.broadcast_to(bvec, (len(x), 2)).copy()

    c_mean = None
    if c:
        def c_mean(x, _c=float(c)):
            return np.full(len(x), _c)

    forcing = None
    if f is not None:
        if callable(f):
            def forcing(t, x, omega, _f=f):
                return np.asarray(_f(t, x), dtype=float)
        else:
            def forcing(t, x, omega, _f=float(f)):
                return np.full(len(x), _f)

    return CoefficientModel(name="constant_adr", eps=eps, b_mean=b_mean,
                            c_mean=c_mean, forcing=forcing,
                            forcing_deterministic=True,
                            param_dim=param_dim)
