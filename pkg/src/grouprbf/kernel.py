"""Gaussian RBF feature map with the shared ``D Omega D`` metric.

The correlation matrix is parameterised through the hyperspherical
coordinates of its Cholesky-type factor ``V`` (lower triangular, unit-norm
rows) so that ``Omega = V V^T``. Row ``m`` (0-based) carries ``m`` angles:
the first ``m - 1`` live in ``[0, pi]`` and the last one in ``[0, 2 pi]``.

Quadratic forms are always evaluated as ``||V^T D (x - mu)||^2`` so they are
non-negative in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .groups import GroupStructure

__all__ = [
    "AngleSet",
    "CorrelationMatrix",
    "ImportanceVector",
    "RbfState",
    "angle_bounds",
    "build_correlation",
    "build_factor_row",
    "data_fit",
    "eval_mean",
    "features",
    "grad_negloglik_d",
    "partial_mean",
    "projections",
    "quad_form",
]


def angle_bounds(p: int) -> np.ndarray:
    """Upper support bound of every angle slot as a (p, p) array (0 where unused)."""
    ub = np.zeros((p, p))
    for m in range(1, p):
        ub[m, : m - 1] = np.pi
        ub[m, m - 1] = 2.0 * np.pi
    return ub


@dataclass
class AngleSet:
    """Ragged angle table stored in the strict lower triangle of a (p, p) array."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float, ndmin=2)
        p = self.theta.shape[0]
        if self.theta.shape != (p, p):
            raise ValueError("theta must be a square (p, p) array")
        self.theta = np.tril(self.theta, -1)

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @property
    def count(self) -> int:
        return self.p * (self.p - 1) // 2

    @classmethod
    def identity(cls, p: int) -> AngleSet:
        """All angles at pi/2, which gives Omega = I."""
        return cls(np.tril(np.full((p, p), np.pi / 2), -1))

    @classmethod
    def random(cls, p: int, rng: np.random.Generator) -> AngleSet:
        return cls(rng.uniform(size=(p, p)) * angle_bounds(p))

    def flat(self) -> np.ndarray:
        return self.theta[np.tril_indices(self.p, -1)]

    @classmethod
    def from_flat(cls, p: int, values) -> AngleSet:
        theta = np.zeros((p, p))
        theta[np.tril_indices(p, -1)] = values
        return cls(theta)

    def validate(self) -> None:
        ub = angle_bounds(self.p)
        low = np.tril(np.ones((self.p, self.p), dtype=bool), -1)
        t = self.theta[low]
        if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > ub[low]):
            raise ValueError("angle outside its support")


def build_factor_row(angles: np.ndarray) -> np.ndarray:
    """Unit vector of length ``len(angles) + 1`` in hyperspherical coordinates.

    Entry ``k`` is ``sin(t_0)...sin(t_{k-1}) cos(t_k)``; the last entry is
    the product of all sines.
    """
    angles = np.asarray(angles, dtype=float)
    sines = np.concatenate(([1.0], np.cumprod(np.sin(angles))))
    cosines = np.concatenate((np.cos(angles), [1.0]))
    row = sines * cosines
    return row / np.sqrt(row @ row)


@dataclass
class CorrelationMatrix:
    """``Omega = V V^T`` together with its lower-triangular factor ``V``."""

    V: np.ndarray
    omega: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        om = self.V @ self.V.T
        self.omega = 0.5 * (om + om.T)

    @property
    def p(self) -> int:
        return self.V.shape[0]


def build_correlation(angles: AngleSet) -> CorrelationMatrix:
    angles.validate()
    p = angles.p
    V = np.zeros((p, p))
    V[0, 0] = 1.0
    for m in range(1, p):
        V[m, : m + 1] = build_factor_row(angles.theta[m, :m])
    return CorrelationMatrix(V)


def factor_matrix(theta: np.ndarray) -> np.ndarray:
    """``V`` from a raw angle array, skipping validation (sampler hot path)."""
    p = theta.shape[0]
    V = np.zeros((p, p))
    V[0, 0] = 1.0
    for m in range(1, p):
        V[m, : m + 1] = build_factor_row(theta[m, :m])
    return V


@dataclass
class ImportanceVector:
    """Spike-and-slab importance coefficients ``d_j = gamma_g rho_j beta_j``.

    ``gamma`` is per group, ``rho`` and ``beta`` per predictor, ``s2`` holds
    the per-group slab variances and ``b`` the within-group inclusion
    probabilities.
    """

    groups: GroupStructure
    gamma: np.ndarray
    rho: np.ndarray
    beta: np.ndarray
    s2: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        M, p = self.groups.M, self.groups.p
        self.gamma = np.asarray(self.gamma, dtype=np.int64).reshape(M)
        self.rho = np.asarray(self.rho, dtype=np.int64).reshape(p)
        self.beta = np.asarray(self.beta, dtype=float).reshape(p)
        self.s2 = np.asarray(self.s2, dtype=float).reshape(M)
        self.b = np.asarray(self.b, dtype=float).reshape(M)

    @classmethod
    def from_d(cls, groups: GroupStructure, d) -> ImportanceVector:
        """All indicators on, ``beta = d``; unit slab variances."""
        return cls(groups, np.ones(groups.M), np.ones(groups.p), d,
                   np.ones(groups.M), np.full(groups.M, 0.5))

    @property
    def active(self) -> np.ndarray:
        return (self.gamma[self.groups.group_of] * self.rho) == 1

    @property
    def d(self) -> np.ndarray:
        return np.where(self.active, self.beta, 0.0)

    def copy(self) -> ImportanceVector:
        return ImportanceVector(self.groups, self.gamma.copy(), self.rho.copy(),
                                self.beta.copy(), self.s2.copy(), self.b.copy())


@dataclass
class RbfState:
    """Weights ``lam`` (v, K), centers ``mu`` (v, K, p), shared ``d`` and angles."""

    lam: np.ndarray
    mu: np.ndarray
    importance: ImportanceVector
    angles: AngleSet

    def __post_init__(self):
        self.lam = np.array(self.lam, dtype=float, ndmin=2)
        self.mu = np.asarray(self.mu, dtype=float)
        v, K = self.lam.shape
        if self.mu.shape != (v, K, self.angles.p):
            raise ValueError(f"mu has shape {self.mu.shape}, expected {(v, K, self.angles.p)}")
        if K < 1:
            raise ValueError("K must be >= 1")

    @property
    def K(self) -> int:
        return self.lam.shape[1]

    @property
    def v(self) -> int:
        return self.lam.shape[0]

    @property
    def p(self) -> int:
        return self.angles.p

    @property
    def d(self) -> np.ndarray:
        return self.importance.d

    def correlation(self) -> CorrelationMatrix:
        return build_correlation(self.angles)

    def copy(self) -> RbfState:
        return RbfState(self.lam.copy(), self.mu.copy(), self.importance.copy(),
                        AngleSet(self.angles.theta.copy()))


def quad_form(x, mu, d, corr: CorrelationMatrix) -> float:
    x, mu, d = (np.asarray(a, dtype=float) for a in (x, mu, d))
    if not (x.shape == mu.shape == d.shape == (corr.p,)):
        raise ValueError("dimension mismatch between x, mu, d and Omega")
    z = (d * (x - mu)) @ corr.V
    return float(z @ z)


def projections(X: np.ndarray, mu: np.ndarray, d: np.ndarray, V: np.ndarray):
    """Displacements, projected vectors and quadratic forms for every (l, j, i).

    Returns ``delta`` and ``z`` of shape (v, K, n, p) and ``q`` (v, K, n),
    where ``z = V^T D (x_i - mu_lj)`` and ``q = ||z||^2``.
    """
    delta = X[None, None, :, :] - mu[:, :, None, :]
    z = (delta * d) @ V
    q = np.einsum("lkip,lkip->lki", z, z)
    return delta, z, q


def features(X: np.ndarray, state: RbfState, V: np.ndarray | None = None) -> np.ndarray:
    """``exp(-q)`` for every response, hidden unit and row: shape (v, K, n)."""
    if V is None:
        V = state.correlation().V
    _, _, q = projections(np.atleast_2d(X), state.mu, state.d, V)
    return np.exp(-q)


def eval_mean(x, state: RbfState, V: np.ndarray | None = None) -> np.ndarray:
    """Mean functions at ``x``: a length-v vector for one point, (n, v) for a matrix."""
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(state.lam)) and np.all(np.isfinite(state.mu))
            and np.all(np.isfinite(state.importance.beta))):
        raise FloatingPointError("non-finite RBF state")
    single = x.ndim == 1
    phi = features(np.atleast_2d(x), state, V)
    f = np.einsum("lk,lki->il", state.lam, phi)
    return f[0] if single else f


def partial_mean(x, state: RbfState, ell: int, coord: int) -> float:
    """Analytic ``d f_ell / d x_coord``."""
    if not 0 <= ell < state.v:
        raise IndexError(f"response index {ell} out of range")
    if not 0 <= coord < state.p:
        raise IndexError(f"predictor index {coord} out of range")
    x = np.asarray(x, dtype=float)
    V = state.correlation().V
    d = state.d
    delta = x[None, :] - state.mu[ell]           # (K, p)
    z = (delta * d) @ V
    q = np.einsum("kp,kp->k", z, z)
    w = z @ V.T                                   # Omega D (x - mu)
    return float(-2.0 * d[coord] * np.sum(state.lam[ell] * np.exp(-q) * w[:, coord]))


def data_fit(X, target, weight, lam, mu, d, V, with_grad=True):
    """Weighted squared-error term and its gradient in ``d``.

    Evaluates ``U = 0.5 * sum(weight * (target - f)^2)`` with ``f`` the RBF
    means. ``weight`` is (n, v), zero for missing entries. Returns
    ``(U, grad, f)``; ``grad`` is None when ``with_grad`` is False.
    """
    delta, z, q = projections(X, mu, d, V)
    phi = np.exp(-q)
    f = np.einsum("lk,lki->il", lam, phi)
    r = np.where(weight > 0, target - f, 0.0)
    U = 0.5 * float(np.sum(weight * r * r))
    if not with_grad:
        return U, None, f
    coef = (r * weight).T[:, None, :] * lam[:, :, None] * phi     # (v, K, n)
    w = z @ V.T
    grad = 2.0 * np.einsum("lki,lkip,lkip->p", coef, delta, w)
    return U, grad, f


def grad_negloglik_d(data, rbf: RbfState, factor) -> np.ndarray:
    """Gradient of the negative log posterior with respect to the active ``d``.

    Covers the Gaussian data term on observed entries and the slab prior
    ``beta / s_g^2``. Inactive coordinates are reported as 0.
    """
    imp = rbf.importance
    active = imp.active
    if not active.any():
        return np.zeros(rbf.p)
    mask = data.mask
    target = np.where(mask, data.Y, 0.0) - factor.eta @ factor.Lambda.T
    weight = mask / factor.sig2[None, :]
    V = rbf.correlation().V
    _, grad, _ = data_fit(data.X, target, weight, rbf.lam, rbf.mu, imp.d, V)
    grad = grad + imp.beta / imp.s2[imp.groups.group_of]
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient of the negative log posterior")
    return np.where(active, grad, 0.0)
