"""Negatively oriented scoring rules for Gaussian predictive distributions."""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

_SQRT_PI = np.sqrt(np.pi)
_LOG_2PI = np.log(2.0 * np.pi)

_KINDS = ("spe", "nlpd", "crps", "is")


@dataclass(frozen=True)
class ScoringRule:
    kind: str
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown scoring rule {self.kind!r}")
        if self.kind == "is":
            if self.alpha is None or not (0.0 < self.alpha < 1.0):
                raise ValueError("interval score needs alpha in (0, 1)")
        elif self.alpha is not None:
            raise ValueError(f"{self.kind} takes no alpha")

    @property
    def name(self):
        if self.kind == "is":
            level = round(100 * (1 - self.alpha), 6)
            return f"IS{level:g}"
        return self.kind.upper()

    def __str__(self):
        return self.name

    @classmethod
    def parse(cls, text):
        """"spe", "nlpd", "crps", "is" (95%), "is95", "is:0.1" (alpha)."""
        if isinstance(text, ScoringRule):
            return text
        s = str(text).strip().lower()
        if s in ("spe", "nlpd", "crps"):
            return cls(s)
        if s == "is":
            return cls("is", 0.05)
        if s.startswith("is:"):
            return cls("is", float(s[3:]))
        if s.startswith("is"):
            level = float(s[2:]) / 100.0
            return cls("is", round(1.0 - level, 12))
        raise ValueError(f"unknown scoring rule {text!r}")


SPE = ScoringRule("spe")
NLPD = ScoringRule("nlpd")
CRPS = ScoringRule("crps")
IS95 = ScoringRule("is", 0.05)


def _std_pdf(u):
    return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)


def gaussian_quantile(prob):
    return ndtri(prob)


def _arrays(p, z):
    mu = np.asarray(p.mu, dtype=np.float64)
    s2 = np.asarray(p.sigma2, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(s2 <= 0):
        raise ValueError("predictive variance must be positive")
    return mu, s2, z


def score(rule, p, z):
    """Per-point score S(P; z). Scalar in, scalar out; arrays broadcast."""
    mu, s2, z = _arrays(p, z)
    out = _score(rule, mu, s2, z)
    return float(out) if np.ndim(out) == 0 else out


def _score(rule, mu, s2, z):
    r = z - mu
    if rule.kind == "spe":
        return r * r
    if rule.kind == "nlpd":
        return 0.5 * (_LOG_2PI + np.log(s2)) + 0.5 * r * r / s2
    sigma = np.sqrt(s2)
    if rule.kind == "crps":
        u = r / sigma
        return sigma * (u * (2.0 * ndtr(u) - 1.0) + 2.0 * _std_pdf(u) - 1.0 / _SQRT_PI)
    q = gaussian_quantile(1.0 - rule.alpha / 2.0)
    lo = mu - q * sigma
    hi = mu + q * sigma
    below = (z <= lo).astype(np.float64)
    above = (z > hi).astype(np.float64)
    return (hi - lo) + (2.0 / rule.alpha) * ((lo - z) * below + (z - hi) * above)


def score_derivatives(rule, mu, sigma2, z):
    """Partial derivatives (dS/dmu, dS/dsigma2), elementwise."""
    mu = np.asarray(mu, dtype=np.float64)
    s2 = np.asarray(sigma2, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    r = z - mu
    if rule.kind == "spe":
        return -2.0 * r, np.zeros_like(s2 + r)
    if rule.kind == "nlpd":
        return -r / s2, 0.5 / s2 - 0.5 * r * r / (s2 * s2)
    sigma = np.sqrt(s2)
    if rule.kind == "crps":
        u = r / sigma
        return -(2.0 * ndtr(u) - 1.0), (2.0 * _std_pdf(u) - 1.0 / _SQRT_PI) / (2.0 * sigma)
    q = gaussian_quantile(1.0 - rule.alpha / 2.0)
    below = (z <= mu - q * sigma).astype(np.float64)
    above = (z > mu + q * sigma).astype(np.float64)
    k = 2.0 / rule.alpha
    d_mu = k * below - k * above
    d_sigma = 2.0 * q - k * q * (below + above)
    return d_mu, d_sigma / (2.0 * sigma)


def mean_score(rule, predictives, zs):
    """Arithmetic mean of per-point scores.

    ``predictives`` is a vector GaussianPredictive or a sequence of scalar ones.
    """
    if isinstance(predictives, (list, tuple)):
        mu = np.array([float(p.mu) for p in predictives])
        s2 = np.array([float(p.sigma2) for p in predictives])
    else:
        mu = np.asarray(predictives.mu, dtype=np.float64).reshape(-1)
        s2 = np.asarray(predictives.sigma2, dtype=np.float64).reshape(-1)
    zs = np.asarray(zs, dtype=np.float64).reshape(-1)
    if mu.size == 0:
        raise ValueError("mean_score needs at least one prediction")
    if zs.size != mu.size:
        raise ValueError("predictives and observations differ in length")
    if np.any(s2 <= 0):
        raise ValueError("predictive variance must be positive")
    return float(np.mean(_score(rule, mu, s2, zs)))
