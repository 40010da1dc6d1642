"""Hand-coded reverse-mode gradients in (log sigma2, log rho_1..log rho_d).

Every criterion is first differentiated with respect to the covariance (or
correlation) matrix; the adjoint matrix is then contracted against the kernel
derivatives, which costs O(d n^2) on top of the O(n^3) factorization.
"""

from dataclasses import dataclass
from math import isinf, log, pi

import numpy as np

from .criteria import CriterionSpec, DegenerateData, _require_signal
from .gp import VARIANCE_FLOOR, NotPositiveDefinite, factorize
from .kernel import contract_range_derivatives, correlation_matrix, cov_matrix, cross_cov
from .scoring import ScoringRule, _score, score_derivatives


@dataclass(frozen=True, eq=False)
class PredictionTape:
    """Intermediates of one prediction pass, kept for the adjoint sweep.

    ``clamped`` marks test points whose variance hit the floor.
    """

    K: np.ndarray
    Kstar: np.ndarray
    kss: np.ndarray
    z: np.ndarray
    B: np.ndarray
    Gamma: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    clamped: np.ndarray


def build_tape(theta, data, Xtest):
    K = cov_matrix(data.X, theta)
    fac = factorize(K)
    Kstar, kss = cross_cov(data.X, Xtest, theta)
    B = fac.inverse
    # same solves as gp.predict so that values agree to the last bit
    Gamma = fac.solve(Kstar)
    mu = Kstar.T @ fac.solve(data.z)
    raw = kss - np.einsum("ij,ij->j", Kstar, Gamma)
    clamped = raw < VARIANCE_FLOOR
    return PredictionTape(K, Kstar, kss, data.z, B, Gamma, mu, np.where(clamped, VARIANCE_FLOOR, raw), clamped)


def adjoint_prediction(tape, delta_mu, delta_sigma2):
    """Pull (delta_mu, delta_sigma2) back onto (K, K*, k**).

    Returns ``(dK, dKstar, dkss)``.
    """
    n, m = tape.Kstar.shape
    delta_mu = np.asarray(delta_mu, dtype=np.float64).reshape(-1)
    delta_sigma2 = np.asarray(delta_sigma2, dtype=np.float64).reshape(-1)
    if delta_mu.size != m or delta_sigma2.size != m:
        raise ValueError(f"adjoint vectors must have length {m}")
    # the variance floor is a safeguard: nothing flows back through it
    delta_sigma2 = np.where(tape.clamped, 0.0, delta_sigma2)
    B, Ks, Gamma = tape.B, tape.Kstar, tape.Gamma

    Delta = np.broadcast_to(delta_sigma2, (n, m))
    d_Gamma = -Ks * Delta
    d_Kstar = np.outer(B @ tape.z, delta_mu) - Gamma * Delta + B.T @ d_Gamma
    d_kss = delta_sigma2.copy()
    d_B = np.outer(Ks @ delta_mu, tape.z) + d_Gamma @ Ks.T
    d_K = -B.T @ d_B @ B.T
    return d_K, d_Kstar, d_kss


def score_value_and_gradient(theta, data, Xtest, ztest, rule):
    """Test-set mean score R(theta; S) and its gradient."""
    rule = ScoringRule.parse(rule)
    ztest = np.asarray(ztest, dtype=np.float64).reshape(-1)
    tape = build_tape(theta, data, Xtest)
    m = ztest.size
    value = float(np.mean(_score(rule, tape.mu, tape.sigma2, ztest)))
    dmu, ds2 = score_derivatives(rule, tape.mu, tape.sigma2, ztest)
    dK, dKs, dkss = adjoint_prediction(tape, dmu / m, ds2 / m)

    grad = np.empty(1 + theta.d)
    grad[0] = np.sum(dK * tape.K) + np.sum(dKs * tape.Kstar) + dkss @ tape.kss
    grad[1:] = contract_range_derivatives(data.X, data.X, theta, dK)
    grad[1:] += contract_range_derivatives(data.X, Xtest, theta, dKs)
    if rule.kind == "spe":
        grad[0] = 0.0
    return value, grad


def score_gradient(theta, data, Xtest, ztest, rule):
    return score_value_and_gradient(theta, data, Xtest, ztest, rule)[1]


# criteria


def _loo_adjoint(rule, K, z):
    """Value of the LOO mean score and its adjoint with respect to K."""
    fac = factorize(K)
    B = fac.inverse
    alpha = B @ z
    b = np.diag(B).copy()
    mu = z - alpha / b
    raw = 1.0 / b
    clamped = raw < VARIANCE_FLOOR
    var = np.where(clamped, VARIANCE_FLOOR, raw)
    n = z.size
    value = float(np.mean(_score(rule, mu, var, z)))
    dmu, dvar = score_derivatives(rule, mu, var, z)
    dmu = dmu / n
    dvar = np.where(clamped, 0.0, dvar / n)
    d_alpha = -dmu / b
    d_b = dmu * alpha / b**2 - dvar / b**2
    d_B = np.diag(d_b) + np.outer(d_alpha, z)
    return value, -B @ d_B @ B


def _nll_adjoint(K, z):
    fac = factorize(K)
    B = fac.inverse
    alpha = B @ z
    value = 0.5 * (z.size * log(2.0 * pi) + fac.logdet + float(z @ alpha))
    return value, 0.5 * (B - np.outer(alpha, alpha))


def _pl_adjoint(R, z):
    fac = factorize(R)
    B = fac.inverse
    a = B @ z
    quad = float(z @ a)
    n = z.size
    value = log(quad / n) + fac.logdet / n
    return value, B / n - np.outer(a, a) / quad


def _gcv_adjoint(K, z):
    # equivalent closed form: n |K^{-1} z|^2 / tr(K^{-1})^2
    fac = factorize(K)
    B = fac.inverse
    alpha = B @ z
    n = z.size
    tr = np.trace(B)
    aa = float(alpha @ alpha)
    value = n * aa / tr**2
    d_alpha = 2.0 * n * alpha / tr**2
    d_tr = -2.0 * n * aa / tr**3
    d_B = np.outer(d_alpha, z) + d_tr * np.eye(n)
    return value, -B @ d_B @ B


def _ka_adjoint(R, z):
    zz = float(z @ z)
    if zz == 0.0:
        raise DegenerateData("kernel alignment is undefined for z = 0")
    fro = np.linalg.norm(R, "fro")
    quad = float(z @ R @ z)
    value = -quad / (fro * zz)
    return value, -np.outer(z, z) / (fro * zz) + quad / (fro**3 * zz) * R


def _hl_adjoint(p, q, R, z):
    lam, Q = np.linalg.eigh(R)
    if lam[0] <= 0.0:
        raise NotPositiveDefinite("correlation matrix has a non-positive eigenvalue")
    n = z.size
    c = Q.T @ z
    f = lam**-p
    A = float(np.sum(c * c * f))
    if A == 0.0:
        raise DegenerateData("observations are identically zero")

    # Loewner matrix of lam -> lam^-p
    dl = lam[:, None] - lam[None, :]
    close = np.abs(dl) <= 1e-9 * np.maximum(lam[:, None], lam[None, :])
    mid = 0.5 * (lam[:, None] + lam[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(close, -p * mid ** (-p - 1.0), (f[:, None] - f[None, :]) / np.where(close, 1.0, dl))
    d_logA = Q @ (F * np.outer(c, c)) @ Q.T / A

    if q == 0:
        M = float(np.exp(np.mean(np.log(lam))))
        d_logM = Q @ np.diag(1.0 / (n * lam)) @ Q.T
    elif isinf(q):
        k = int(np.argmax(lam)) if q > 0 else int(np.argmin(lam))
        M = float(lam[k])
        d_logM = np.outer(Q[:, k], Q[:, k]) / M
    else:
        S = float(np.mean(lam**q))
        M = S ** (1.0 / q)
        d_logM = Q @ np.diag(lam ** (q - 1.0) / n) @ Q.T / S
    value = A ** (1.0 / p) * M
    return value, value * (d_logA / p + d_logM)


def criterion_value_and_gradient(spec, theta, data):
    """Criterion value at theta and its gradient in (log sigma2, log rho).

    For NLL/SPE the differentiated quantity is the NLL that fits the ranges.
    """
    spec = CriterionSpec.parse(spec)
    z = data.z
    if spec.kind != "loo" or spec.rule.kind != "spe":
        _require_signal(z)
    grad = np.zeros(1 + theta.d)

    if spec.kind in ("pl", "hl", "ka"):
        R = correlation_matrix(data.X, theta.rho, theta.nu)
        if spec.kind == "pl":
            value, dR = _pl_adjoint(R, z)
        elif spec.kind == "hl":
            value, dR = _hl_adjoint(spec.p, spec.q, R, z)
        else:
            value, dR = _ka_adjoint(R, z)
        grad[1:] = contract_range_derivatives(data.X, data.X, theta, dR) / theta.sigma2
        return value, grad

    K = cov_matrix(data.X, theta)
    if spec.kind == "loo":
        value, dK = _loo_adjoint(spec.rule, K, z)
    elif spec.kind in ("nll", "hybrid"):
        value, dK = _nll_adjoint(K, z)
    else:
        value, dK = _gcv_adjoint(K, z)
    grad[1:] = contract_range_derivatives(data.X, data.X, theta, dK)
    if not spec.sigma2_blind:
        grad[0] = np.sum(dK * K)
    return value, grad


def criterion_gradient(spec, theta, data):
    return criterion_value_and_gradient(spec, theta, data)[1]
