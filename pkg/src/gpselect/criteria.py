"""Selection criteria J_n(theta) and the two rules for choosing sigma2."""

from dataclasses import dataclass
from math import isinf, log, pi

import numpy as np

from .gp import VARIANCE_FLOOR, GaussianPredictive, NotPositiveDefinite, factorize, loo_from_factorization
from .kernel import correlation_matrix, cov_matrix
from .scoring import SPE, ScoringRule, mean_score

KINDS = ("loo", "nll", "pl", "hl", "gcv", "ka", "hybrid")
SIGMA2_RULES = ("profiling", "cressie", None)
_DEFAULT = "default"


class DegenerateData(ValueError):
    """Observations are identically zero, so sigma2 rules are undefined."""


@dataclass(frozen=True)
class CriterionSpec:
    """Which criterion to minimize and how sigma2 is chosen.

    ``sigma2_rule`` is "profiling", "cressie" or None (sigma2 optimized jointly
    with the ranges). Left unset it takes the default binding for ``kind``.
    """

    kind: str
    rule: ScoringRule | None = None
    p: float | None = None
    q: float | None = None
    sigma2_rule: str | None = _DEFAULT

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.kind == "loo":
            if self.rule is None:
                raise ValueError("LOO criterion needs a scoring rule")
            object.__setattr__(self, "rule", ScoringRule.parse(self.rule))
            if self.rule.kind == "is":
                raise ValueError("the interval score is used for validation only")
        elif self.rule is not None:
            raise ValueError(f"{self.kind} takes no scoring rule")
        if self.kind == "hl":
            if self.p is None or self.p == 0 or self.q is None:
                raise ValueError("Holderized likelihood needs p != 0 and q")
            object.__setattr__(self, "p", float(self.p))
            object.__setattr__(self, "q", float(self.q))
        elif self.p is not None or self.q is not None:
            raise ValueError(f"{self.kind} takes no (p, q)")

        rule = self.sigma2_rule
        if rule == _DEFAULT:
            rule = self._default_sigma2_rule()
        if rule not in SIGMA2_RULES:
            raise ValueError(f"unknown sigma2 rule {rule!r}")
        if self.kind in ("nll", "pl", "hybrid") and rule != "profiling":
            raise ValueError(f"{self.name} implies the profiling rule")
        if self.sigma2_blind and rule is None:
            raise ValueError(f"{self.name} does not select sigma2; give a sigma2 rule")
        if self.kind == "loo" and self.rule.kind == "crps" and rule is not None:
            raise ValueError("LOO-CRPS selects sigma2 jointly (sigma2_rule=None)")
        if self.kind == "loo" and self.rule.kind == "nlpd" and rule == "profiling":
            raise ValueError("LOO-NLPD is compatible with Cressie's rule or joint selection only")
        object.__setattr__(self, "sigma2_rule", rule)

    def _default_sigma2_rule(self):
        if self.kind in ("nll", "pl", "hybrid"):
            return "profiling"
        if self.kind == "loo" and self.rule.kind in ("nlpd", "crps"):
            return None
        return "cressie"

    @property
    def sigma2_blind(self):
        """True when the criterion value does not depend on sigma2."""
        return self.kind in ("pl", "hl", "gcv", "ka") or (self.kind == "loo" and self.rule.kind == "spe")

    @property
    def name(self):
        if self.kind == "loo":
            return f"LOO-{self.rule.name}"
        if self.kind == "hl":
            return f"HL({self.p:g},{self.q:g})"
        return {"nll": "NLL", "pl": "PL", "gcv": "GCV", "ka": "KA", "hybrid": "NLL/SPE"}[self.kind]

    @property
    def label(self):
        """``name``, suffixed with the sigma2 rule when it is not the default one."""
        if self.sigma2_rule == self._default_sigma2_rule():
            return self.name
        return f"{self.name}[{self.sigma2_rule or 'joint'}]"

    def __str__(self):
        return self.label

    @classmethod
    def parse(cls, text, sigma2_rule=_DEFAULT):
        """Parse names such as "NLL", "LOO-CRPS", "GCV", "KA", "NLL/SPE", "HL(2,-1)".

        A label suffix such as "GCV[profiling]" or "LOO-NLPD[cressie]" sets the sigma2 rule.
        """
        if isinstance(text, CriterionSpec):
            return text
        s = str(text).strip().lower().replace("_", "-")
        if s.endswith("]") and "[" in s:
            s, _, tail = s[:-1].partition("[")
            if sigma2_rule != _DEFAULT:
                raise ValueError(f"{text!r} already names a sigma2 rule")
            sigma2_rule = None if tail == "joint" else tail
        if s.startswith("loo-"):
            return cls("loo", rule=ScoringRule.parse(s[4:]), sigma2_rule=sigma2_rule)
        if s in ("nll", "ml"):
            return cls("nll", sigma2_rule=sigma2_rule)
        if s == "pl":
            return cls("pl", sigma2_rule=sigma2_rule)
        if s == "gcv":
            return cls("gcv", sigma2_rule=sigma2_rule)
        if s == "ka":
            return cls("ka", sigma2_rule=sigma2_rule)
        if s in ("nll/spe", "nll-spe", "hybrid"):
            return cls("hybrid", sigma2_rule=sigma2_rule)
        if s.startswith("hl"):
            body = s[2:].strip("():")
            parts = body.replace(":", ",").split(",")
            if len(parts) != 2:
                raise ValueError(f"cannot parse {text!r}; expected HL(p,q)")
            p, q = (float(x) for x in parts)
            return cls("hl", p=p, q=q, sigma2_rule=sigma2_rule)
        raise ValueError(f"unknown criterion {text!r}")


@dataclass(frozen=True)
class EigenFactorization:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _require_signal(z):
    if not np.any(z):
        raise DegenerateData("observations are identically zero")


def _unit_loo(theta, data):
    """LOO quantities for the correlation matrix (sigma2 = 1)."""
    fac = factorize(correlation_matrix(data.X, theta.rho, theta.nu))
    return loo_from_factorization(fac, data.z)


def loo_criterion(rule, theta, data):
    rule = ScoringRule.parse(rule)
    fac = factorize(cov_matrix(data.X, theta))
    mu, var, _, _ = loo_from_factorization(fac, data.z)
    return mean_score(rule, GaussianPredictive(mu, np.maximum(var, VARIANCE_FLOOR)), data.z)


def nll(theta, data):
    fac = factorize(cov_matrix(data.X, theta))
    alpha = fac.solve(data.z)
    return 0.5 * (data.n * log(2.0 * pi) + fac.logdet + float(data.z @ alpha))


def profiling_sigma2(theta, data):
    """(1/n) z^T R^{-1} z; the sigma2 carried by ``theta`` is ignored."""
    _require_signal(data.z)
    fac = factorize(correlation_matrix(data.X, theta.rho, theta.nu))
    return float(data.z @ fac.solve(data.z)) / data.n


def profiled_likelihood(theta, data):
    _require_signal(data.z)
    fac = factorize(correlation_matrix(data.X, theta.rho, theta.nu))
    quad = float(data.z @ fac.solve(data.z))
    return log(quad / data.n) + fac.logdet / data.n


def cressie_sigma2(theta, data):
    """sigma2 making the mean standardized LOO squared residual equal to one."""
    _, var1, alpha, b = _unit_loo(theta, data)
    resid = alpha / b
    value = float(np.mean(resid * resid / var1))
    if value <= 0.0:
        raise DegenerateData("all leave-one-out residuals vanish")
    return value


def eigen_factorize(theta, data):
    R = correlation_matrix(data.X, theta.rho, theta.nu)
    try:
        lam, Q = np.linalg.eigh(R)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if lam[0] <= 0.0:
        raise NotPositiveDefinite("correlation matrix has a non-positive eigenvalue")
    return EigenFactorization(lam, Q)


def _generalized_mean(lam, q):
    if q == 0:
        return float(np.exp(np.mean(np.log(lam))))
    if isinf(q):
        return float(lam.max() if q > 0 else lam.min())
    return float(np.mean(lam**q) ** (1.0 / q))


def holderized_likelihood(p, q, theta, data, eig=None):
    if p == 0:
        raise ValueError("p must be nonzero")
    eig = eig or eigen_factorize(theta, data)
    lam = eig.eigenvalues
    c = eig.eigenvectors.T @ data.z
    A = float(np.sum(c * c / lam**p))
    if A == 0.0 and p < 0:
        raise DegenerateData("observations are identically zero")
    return A ** (1.0 / p) * _generalized_mean(lam, q)


def gcv(theta, data):
    fac = factorize(cov_matrix(data.X, theta))
    mu, var, _, _ = loo_from_factorization(fac, data.z)
    var = np.maximum(var, VARIANCE_FLOOR)
    s_tilde = 1.0 / np.mean(1.0 / var)
    w = s_tilde / var
    r = data.z - mu
    return float(np.mean(w * w * r * r))


def kernel_alignment(theta, data):
    z = data.z
    zz = float(z @ z)
    if zz == 0.0:
        raise DegenerateData("kernel alignment is undefined for z = 0")
    K = cov_matrix(data.X, theta)
    return -float(z @ K @ z) / (np.linalg.norm(K, "fro") * zz)


def apply_sigma2_rule(rule, theta, data):
    """Return ``theta`` with sigma2 replaced according to ``rule``."""
    if rule == "profiling":
        return theta.with_sigma2(profiling_sigma2(theta, data))
    if rule == "cressie":
        return theta.with_sigma2(cressie_sigma2(theta, data))
    if rule is None:
        return theta
    raise ValueError(f"unknown sigma2 rule {rule!r}")


def evaluate(spec, theta, data):
    """Criterion value at theta (sigma2 taken from theta where it matters)."""
    spec = CriterionSpec.parse(spec)
    if spec.kind != "loo" or spec.rule.kind != "spe":
        _require_signal(data.z)
    if spec.kind == "loo":
        return loo_criterion(spec.rule, theta, data)
    if spec.kind == "nll":
        return nll(theta, data)
    if spec.kind == "pl":
        return profiled_likelihood(theta, data)
    if spec.kind == "hl":
        return holderized_likelihood(spec.p, spec.q, theta, data)
    if spec.kind == "gcv":
        return gcv(theta, data)
    if spec.kind == "ka":
        return kernel_alignment(theta, data)
    # NLL/SPE ranks regularities by LOO-SPE of NLL fits
    return loo_criterion(SPE, theta, data)


def hybrid_nll_spe(data, nu_grid, config=None, table=None):
    """Fit (sigma2, rho) by NLL for each nu, keep the fit with the smallest LOO-SPE.

    Returns ``(theta, diagnostics)``; diagnostics holds the chosen nu and
    FitResult, the per-nu LOO-SPE values and the per-nu fits or errors.
    """
    from .selection import SelectionError, fit_grid

    if not nu_grid:
        raise SelectionError("empty regularity grid")
    # each fit reports the LOO-SPE of the NLL estimate as its criterion value
    results = fit_grid(CriterionSpec("hybrid"), data, nu_grid, config, table)
    fits = {nu: r for nu, r in results.items() if not isinstance(r, Exception)}
    errors = {nu: str(r) for nu, r in results.items() if isinstance(r, Exception)}
    if not fits:
        raise SelectionError(f"all NLL fits failed: {errors}")
    scores = {nu: r.criterion_value for nu, r in fits.items()}
    best = min(scores, key=lambda nu: (scores[nu], nu))
    return fits[best].theta_hat, {
        "nu": best,
        "criterion_value": scores[best],
        "fit": fits[best],
        "loo_spe": scores,
        "fits": fits,
        "errors": errors,
    }
