"""The DOME activation family and its exact derivatives.

Three variants:

* ``dome_*`` -- scalar output activation for binary heads, bounded in
  (0, 1), saturating only in a narrow band around +/-mu.
* ``pdome_*`` -- two-term hidden-layer form with a learnable penalty
  ``pi`` on the negative lobe, bounded in (-pi, 1).
* ``mdome_*`` -- multi-class form scoring a point in R^(n-1) by its
  scaled squared distances to the n unit reference directions of a
  regular simplex; outputs sum to one.

All forward functions accept scalars or arrays (the trailing axis is the
coordinate axis for the multi-class ops); backward functions return
exact analytic partials, verified against central finite differences in
the test suite.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomeParams",
    "PdomeParams",
    "MdomeParams",
    "SimplexRefs",
    "dome_forward",
    "dome_backward",
    "pdome_forward",
    "pdome_backward",
    "simplex_vertices",
    "mdome_kappa",
    "mdome_forward",
    "mdome_jacobian",
    "mdome_normalize",
    "mdome_normalize_backward",
    "dome_logit1",
    "dome_logit2",
]

# Parameters are stored as 0-d float64 arrays so the optimizer can update
# them in place through the shared Param references.


def _scalar_param(value, name, minimum=None):
    arr = np.asarray(float(value), dtype=np.float64)
    if minimum is not None and not arr > minimum:
        raise ValueError(f"{name} must be > {minimum}, got {float(arr)}")
    return arr


@dataclass
class DomeParams:
    """Mode location ``mu`` and breadth ``sigma`` of the scalar activation."""

    mu: np.ndarray = 1.0
    sigma: np.ndarray = 1.0
    learnable: bool = True

    def __post_init__(self):
        self.mu = _scalar_param(self.mu, "mu", 0.0)
        self.sigma = _scalar_param(self.sigma, "sigma", 0.0)


@dataclass
class PdomeParams:
    """DOME hidden-layer parameters plus the negative-side penalty ``pi``."""

    mu: np.ndarray = 1.0
    sigma: np.ndarray = 1.0
    pi: np.ndarray = 0.1
    learnable: bool = True

    def __post_init__(self):
        self.mu = _scalar_param(self.mu, "mu", 0.0)
        self.sigma = _scalar_param(self.sigma, "sigma", 0.0)
        self.pi = np.asarray(float(self.pi), dtype=np.float64)
        if self.pi < 0:
            raise ValueError(f"pi must be >= 0, got {float(self.pi)}")


@dataclass(frozen=True)
class SimplexRefs:
    """The n unit reference directions of a regular n-simplex in n-1 dims."""

    n: int
    vertices: np.ndarray  # (n, n-1), rows unit-norm, pairwise dot -1/(n-1)

    @property
    def dim(self):
        return self.n - 1


@dataclass
class MdomeParams:
    """Simplex references plus the shared ``mu``/``sigma`` of the class anchors."""

    refs: SimplexRefs
    mu: np.ndarray = 1.0
    sigma: np.ndarray = 5.0
    learnable: bool = True

    def __post_init__(self):
        self.mu = _scalar_param(self.mu, "mu", 0.0)
        self.sigma = _scalar_param(self.sigma, "sigma", 0.0)

    @property
    def n(self):
        return self.refs.n


def dome_forward(x, p):
    """0.5 * (1 + exp(-((x-mu)/sigma)^2) - exp(-((x+mu)/sigma)^2)), in (0, 1)."""
    u = (x - p.mu) / p.sigma
    v = (x + p.mu) / p.sigma
    return 0.5 * (1.0 + np.exp(-u * u) - np.exp(-v * v))


def dome_backward(x, p):
    """Partials of dome_forward with respect to (x, mu, sigma)."""
    u = (x - p.mu) / p.sigma
    v = (x + p.mu) / p.sigma
    e1 = np.exp(-u * u)
    e2 = np.exp(-v * v)
    d_x = (v * e2 - u * e1) / p.sigma
    d_mu = (u * e1 + v * e2) / p.sigma
    d_sigma = (u * u * e1 - v * v * e2) / p.sigma
    return d_x, d_mu, d_sigma


def pdome_forward(x, p):
    """exp(-((x-mu)/sigma)^2) - pi * exp(-((x+mu)/sigma)^2), in (-pi, 1)."""
    u = (x - p.mu) / p.sigma
    v = (x + p.mu) / p.sigma
    return np.exp(-u * u) - p.pi * np.exp(-v * v)


def pdome_backward(x, p):
    """Partials of pdome_forward with respect to (x, mu, sigma, pi)."""
    u = (x - p.mu) / p.sigma
    v = (x + p.mu) / p.sigma
    e1 = np.exp(-u * u)
    e2 = np.exp(-v * v)
    d_x = 2.0 * (p.pi * v * e2 - u * e1) / p.sigma
    d_mu = 2.0 * (u * e1 + p.pi * v * e2) / p.sigma
    d_sigma = 2.0 * (u * u * e1 - p.pi * v * v * e2) / p.sigma
    d_pi = -e2
    return d_x, d_mu, d_sigma, d_pi


def simplex_vertices(n):
    """Unit reference directions of a regular n-simplex centered at the origin.

    Construction: center the n standard basis vectors of R^n, express them
    in an orthonormal basis of the sum-zero subspace (modified Gram-Schmidt),
    and rescale each coordinate vector to unit norm. Pairwise dots are
    exactly -1/(n-1) up to rounding, the rows sum to the zero vector, and
    n=2 reduces to {+1, -1}.
    """
    if n < 2:
        raise ValueError(f"simplex needs at least 2 vertices, got {n}")
    centered = np.eye(n) - 1.0 / n
    basis = []
    for i in range(n - 1):
        v = centered[i].copy()
        for b in basis:
            v -= (v @ b) * b
        v /= np.linalg.norm(v)
        basis.append(v)
    coords = centered @ np.array(basis).T  # (n, n-1)
    coords /= np.linalg.norm(coords, axis=1, keepdims=True)
    return SimplexRefs(n=n, vertices=coords)


def _as_points(x, p, op):
    """Validate trailing dimension n-1 and promote to (batch, n-1)."""
    x = np.asarray(x, dtype=np.float64)
    dim = p.refs.dim
    if x.ndim == 0 or x.shape[-1] != dim:
        raise ValueError(f"{op}: input must have trailing dimension {dim}, got shape {x.shape}")
    squeeze = x.ndim == 1
    return (x[None] if squeeze else x.reshape(-1, dim)), squeeze, x.shape


def mdome_kappa(x, p):
    """Negative squared scaled distance to each class anchor mu*e_l; all <= 0."""
    pts, squeeze, shape = _as_points(x, p, "mdome_kappa")
    diff = (pts[:, None, :] - p.mu * p.refs.vertices[None, :, :]) / p.sigma
    kappa = -np.sum(diff * diff, axis=2)
    return kappa[0] if squeeze else kappa.reshape(shape[:-1] + (p.n,))


def mdome_forward(x, p):
    """Class scores e^kappa_i - (S-1)/n with S the sum of the exponentials.

    Equivalent to ((n-1)/n) * (e^kappa_i - sum_{j!=i} e^kappa_j / (n-1)
    + 1/(n-1)); the scores sum to one and each lies in ((2-n)/n, 1).
    """
    kappa = np.atleast_2d(mdome_kappa(x, p))
    ex = np.exp(kappa)
    out = ex - (np.sum(ex, axis=-1, keepdims=True) - 1.0) / p.n
    return out[0] if np.asarray(x).ndim == 1 else out.reshape(np.asarray(x).shape[:-1] + (p.n,))


def mdome_jacobian(x, p):
    """Exact derivatives of mdome_forward: (J_x, d/dmu, d/dsigma).

    For a single point returns J_x of shape (n, n-1) and length-n vectors
    for the parameter partials; batched input prepends the batch axis.
    Each column of J_x sums to zero across outputs because the outputs
    sum to a constant.
    """
    pts, squeeze, shape = _as_points(x, p, "mdome_jacobian")
    refs = p.refs.vertices
    diff = pts[:, None, :] - p.mu * refs[None, :, :]  # (b, n, n-1)
    inv_s2 = 1.0 / (p.sigma * p.sigma)
    kappa = -np.sum(diff * diff, axis=2) * inv_s2
    ex = np.exp(kappa)  # (b, n)

    # d kappa_l / dx_k = -2 diff_lk / sigma^2; w = e^kappa * dkappa
    wx = ex[:, :, None] * (-2.0 * inv_s2 * diff)  # (b, n, n-1)
    jac_x = wx - np.mean(wx, axis=1, keepdims=True)

    # d kappa_l / dmu = 2 (diff_l . e_l) / sigma^2
    wmu = ex * (2.0 * inv_s2 * np.sum(diff * refs[None], axis=2))
    d_mu = wmu - np.mean(wmu, axis=1, keepdims=True)

    # d kappa_l / dsigma = -2 kappa_l / sigma
    wsg = ex * (-2.0 * kappa / p.sigma)
    d_sigma = wsg - np.mean(wsg, axis=1, keepdims=True)

    if squeeze:
        return jac_x[0], d_mu[0], d_sigma[0]
    lead = shape[:-1]
    return (
        jac_x.reshape(lead + (p.n, p.refs.dim)),
        d_mu.reshape(lead + (p.n,)),
        d_sigma.reshape(lead + (p.n,)),
    )


def mdome_normalize(y):
    """Shift multi-class scores to be non-negative and rescale to sum to one.

    Subtracts min(0, min_k y_k) from every component, then divides by the
    new total. Rows with no negative component pass through unchanged
    (scores already sum to one); the uniform shift preserves the argmax.
    """
    y = np.asarray(y, dtype=np.float64)
    arr = np.atleast_2d(y)
    mins = np.min(arr, axis=-1, keepdims=True)
    m = np.minimum(mins, 0.0)
    shifted = arr - m
    total = np.sum(shifted, axis=-1, keepdims=True)
    out = np.where(mins < 0.0, shifted / np.where(total == 0.0, 1.0, total), arr)
    return out[0] if y.ndim == 1 else out.reshape(y.shape)


def mdome_normalize_backward(y, grad):
    """Vector-Jacobian product of mdome_normalize at y (subgradient at the min).

    When every component is non-negative the shift is zero and the map is
    y / sum(y); otherwise the argmin component also moves the shift.
    """
    y = np.asarray(y, dtype=np.float64)
    arr = np.atleast_2d(y)
    g = np.atleast_2d(np.asarray(grad, dtype=np.float64))
    mins = np.min(arr, axis=-1, keepdims=True)
    active = mins < 0.0  # shift depends on y only through the argmin component
    m = np.minimum(mins, 0.0)
    shifted = arr - m
    total = np.sum(shifted, axis=-1, keepdims=True)
    ghat = g / total
    dot = np.sum(ghat * shifted, axis=-1, keepdims=True) / total
    out = ghat - dot
    # argmin component collects -sum_i dD_i/dm * g_i = sum(ghat) - n*dot
    corr = (np.sum(ghat, axis=-1, keepdims=True) - arr.shape[-1] * dot) * active
    idx = np.argmin(arr, axis=-1)
    out[np.arange(arr.shape[0]), idx] -= corr[:, 0]
    out = np.where(active, out, g)  # pass-through rows are the identity map
    return out[0] if y.ndim == 1 else out.reshape(y.shape)


def dome_logit1(x, p):
    """Distance-based surrogate logits: component i is kappa_i(x)."""
    return mdome_kappa(x, p)


def dome_logit2(x, p):
    """Dot-product surrogate logits: component i is x . (mu * e_i)."""
    pts, squeeze, shape = _as_points(x, p, "dome_logit2")
    out = pts @ (p.mu * p.refs.vertices).T
    return out[0] if squeeze else out.reshape(shape[:-1] + (p.n,))
