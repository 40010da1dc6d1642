"""Zero-mean GP interpolation: exact posterior and fast leave-one-out predictives."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .kernel import cov_matrix, cross_cov

VARIANCE_FLOOR = 1e-15


class NotPositiveDefinite(ArithmeticError):
    """The covariance matrix could not be factorized (theta outside the conditioning regime)."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design points X (n, d) and centered observations z (n,)."""

    X: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        z = np.array(self.z, dtype=np.float64).reshape(-1)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("X must be a non-empty (n, d) array")
        if X.shape[0] != z.size:
            raise ValueError(f"X has {X.shape[0]} rows but z has {z.size} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(z))):
            raise ValueError("X and z must be finite")
        if np.unique(X, axis=0).shape[0] != X.shape[0]:
            raise ValueError("duplicated design rows are not allowed in the noiseless setting")
        X.flags.writeable = False
        z.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class GaussianPredictive:
    """Gaussian predictive distributions N(mu, sigma2), one per target point.

    ``mu`` and ``sigma2`` are arrays of equal shape (or scalars).
    """

    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        s2 = np.asarray(self.sigma2, dtype=np.float64)
        if mu.shape != s2.shape:
            raise ValueError("mu and sigma2 must have the same shape")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", s2)

    def __len__(self):
        return self.mu.size

    def __getitem__(self, i):
        return GaussianPredictive(self.mu.reshape(-1)[i], self.sigma2.reshape(-1)[i])

    def __iter__(self):
        for m, s in zip(self.mu.reshape(-1), self.sigma2.reshape(-1)):
            yield GaussianPredictive(m, s)


class GpFactorization:
    """Cholesky factor of a symmetric positive definite matrix, K = L L^T."""

    def __init__(self, L):
        self.L = L
        self.n = L.shape[0]

    def solve(self, b):
        return scipy.linalg.cho_solve((self.L, True), b, check_finite=False)

    @cached_property
    def inverse(self):
        # column solves against the identity
        return self.solve(np.eye(self.n))

    @cached_property
    def diag_inverse(self):
        return np.diag(self.inverse).copy()

    @cached_property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))


def factorize(K):
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("K must be a square matrix")
    try:
        L = scipy.linalg.cholesky(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.isfinite(L)) or np.any(np.diag(L) <= 0.0):
        raise NotPositiveDefinite("non-positive pivot")
    return GpFactorization(L)


def predict(theta, data, Xtest):
    """Posterior N(mu(x), sigma2(x)) at each row of Xtest."""
    fac = factorize(cov_matrix(data.X, theta))
    Kstar, kss = cross_cov(data.X, Xtest, theta)
    alpha = fac.solve(data.z)
    mu = Kstar.T @ alpha
    Gamma = fac.solve(Kstar)
    var = kss - np.einsum("ij,ij->j", Kstar, Gamma)
    return GaussianPredictive(mu, np.maximum(var, VARIANCE_FLOOR))


def loo_from_factorization(fac, z):
    """Leave-one-out means and raw (unclamped) variances from a factorization of K."""
    alpha = fac.solve(z)
    b = fac.diag_inverse
    return z - alpha / b, 1.0 / b, alpha, b


def loo_predictives(theta, data):
    """Leave-one-out predictive distributions via the closed-form inverse formulas."""
    fac = factorize(cov_matrix(data.X, theta))
    mu, var, _, _ = loo_from_factorization(fac, data.z)
    return GaussianPredictive(mu, np.maximum(var, VARIANCE_FLOOR))
