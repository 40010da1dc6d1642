"""Anisotropic Matérn covariance with half-integer regularity.

Parameters are stored in natural units; derivatives are taken with respect to
log(sigma2) and log(rho_j).
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from math import inf, isfinite

import numpy as np

from . import _backend


@total_ordering
@dataclass(frozen=True)
class Regularity:
    """Matérn regularity nu = chi + 1/2, or the Gaussian limit when ``chi is None``."""

    chi: int | None

    def __post_init__(self):
        if self.chi is not None:
            if int(self.chi) != self.chi or self.chi < 0:
                raise ValueError(f"chi must be a non-negative integer, got {self.chi!r}")
            object.__setattr__(self, "chi", int(self.chi))

    @classmethod
    def half_integer(cls, chi):
        return cls(chi)

    @classmethod
    def gaussian(cls):
        return cls(None)

    @classmethod
    def parse(cls, text):
        """Parse "1/2", "2.5", "inf" (or a Regularity) into a Regularity."""
        if isinstance(text, Regularity):
            return text
        s = str(text).strip().lower()
        if s in ("inf", "infinity", "+inf", "gaussian", "oo"):
            return cls.gaussian()
        try:
            nu = Fraction(s)
        except ValueError:
            raise ValueError(f"cannot parse regularity {text!r}") from None
        chi = nu - Fraction(1, 2)
        if chi.denominator != 1 or chi < 0:
            raise ValueError(f"nu must be a half-integer >= 1/2, got {text!r}")
        return cls(int(chi))

    @property
    def is_gaussian(self):
        return self.chi is None

    @property
    def nu(self):
        return inf if self.chi is None else self.chi + 0.5

    @property
    def code(self):
        """Integer code understood by the compiled kernels (-1 = Gaussian)."""
        return -1 if self.chi is None else self.chi

    def __str__(self):
        return "inf" if self.chi is None else f"{2 * self.chi + 1}/2"

    def __lt__(self, other):
        if not isinstance(other, Regularity):
            return NotImplemented
        return self.nu < other.nu


def default_nu_grid(d):
    """chi in {0, 1, 2, 3, 4, d, 2d} plus the Gaussian limit."""
    chis = sorted({0, 1, 2, 3, 4, d, 2 * d})
    return [Regularity(c) for c in chis] + [Regularity.gaussian()]


@dataclass(frozen=True, eq=False)
class MaternParams:
    """theta = (sigma2, rho_1..rho_d, nu)."""

    sigma2: float
    rho: np.ndarray
    nu: Regularity

    def __post_init__(self):
        rho = np.array(self.rho, dtype=np.float64, copy=True).reshape(-1)
        rho.flags.writeable = False
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not isinstance(self.nu, Regularity):
            object.__setattr__(self, "nu", Regularity.parse(self.nu))
        if not (self.sigma2 > 0 and isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if rho.size == 0 or not np.all((rho > 0) & np.isfinite(rho)):
            raise ValueError("rho must be a non-empty vector of positive reals")

    @property
    def d(self):
        return self.rho.size

    @classmethod
    def from_log(cls, log_sigma2, log_rho, nu):
        return cls(float(np.exp(log_sigma2)), np.exp(np.asarray(log_rho, dtype=float)), nu)

    def log_vector(self):
        """(log sigma2, log rho_1, ..., log rho_d)."""
        return np.concatenate([[np.log(self.sigma2)], np.log(self.rho)])

    def with_sigma2(self, sigma2):
        return MaternParams(sigma2, self.rho, self.nu)

    def __eq__(self, other):
        if not isinstance(other, MaternParams):
            return NotImplemented
        return (
            self.sigma2 == other.sigma2
            and self.nu == other.nu
            and np.array_equal(self.rho, other.rho)
        )

    def __repr__(self):
        rho = ", ".join(f"{r:.6g}" for r in self.rho)
        return f"MaternParams(sigma2={self.sigma2:.6g}, rho=[{rho}], nu={self.nu})"


def _check_design(X, d=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None] if d == 1 else X[None, :]
    if X.ndim != 2:
        raise ValueError("design must be a 2-D array (n, d)")
    if d is not None and X.shape[1] != d:
        raise ValueError(f"design has {X.shape[1]} columns, expected {d}")
    return X


def scaled_distance(x, y, rho):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    rho = np.asarray(rho, dtype=np.float64).reshape(-1)
    if not (x.size == y.size == rho.size) or x.size == 0:
        raise ValueError("x, y and rho must share the same dimension d >= 1")
    u = (x - y) / rho
    return float(np.sqrt(np.dot(u, u)))


def matern_correlation(h, nu):
    """k_theta(h) / sigma2. Accepts a scalar or an array of lags."""
    nu = Regularity.parse(nu)
    h_arr = np.asarray(h, dtype=np.float64)
    if np.any(h_arr < 0) or np.any(np.isnan(h_arr)):
        raise ValueError("lag h must be non-negative")
    flat = h_arr.reshape(-1, 1)
    r = _backend.corr_cross(flat, np.zeros((1, 1)), nu.code)[:, 0]
    if h_arr.ndim == 0:
        return float(r[0])
    return r.reshape(h_arr.shape)


def correlation_matrix(X, rho, nu):
    """R_theta: the covariance matrix at unit variance."""
    rho = np.asarray(rho, dtype=np.float64).reshape(-1)
    X = _check_design(X, rho.size)
    return _backend.corr_sym(X / rho, Regularity.parse(nu).code)


def cov_matrix(X, theta):
    return theta.sigma2 * correlation_matrix(X, theta.rho, theta.nu)


def cov_matrix_param_derivatives(X, theta):
    """[dK/dlog sigma2, dK/dlog rho_1, ..., dK/dlog rho_d].

    No derivative in nu is provided.
    """
    X = _check_design(X, theta.d)
    xs = X / theta.rho
    K = theta.sigma2 * _backend.corr_sym(xs, theta.nu.code)
    stack = theta.sigma2 * _backend.corr_dstack(xs, theta.nu.code)
    return [K] + [stack[j] for j in range(theta.d)]


def cross_cov(X, Xtest, theta):
    """Return (K*, k**): the n x m cross-covariance and the m prior variances."""
    X = _check_design(X, theta.d)
    Xtest = _check_design(Xtest, theta.d)
    Kstar = theta.sigma2 * _backend.corr_cross(X / theta.rho, Xtest / theta.rho, theta.nu.code)
    kss = np.full(Xtest.shape[0], theta.sigma2)
    return Kstar, kss


def contract_range_derivatives(X, Y, theta, W):
    """sum_ik W_ik dk(x_i, y_k)/dlog rho_j for each j (length d)."""
    X = _check_design(X, theta.d)
    Y = _check_design(Y, theta.d)
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (X.shape[0], Y.shape[0]):
        raise ValueError("weight matrix shape mismatch")
    g = _backend.grad_contract(X / theta.rho, Y / theta.rho, theta.nu.code, W)
    return theta.sigma2 * g
