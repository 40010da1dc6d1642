"""Range bounds from conditioning, bounded multi-start fits, and choice of nu."""

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import criteria as crit
from .gp import NotPositiveDefinite
from .gradients import criterion_value_and_gradient
from .kernel import MaternParams, Regularity, correlation_matrix, default_nu_grid

ADMISSIBLE_FACTOR = 0.35


class SelectionError(RuntimeError):
    """No usable fit could be produced."""


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 5
    kappa: float = 1e11
    rho_min: float = 1e-2
    maxiter: int = 300
    gtol: float = 1e-6
    ftol: float = 1e-12
    seed: int = 0
    scales: tuple | None = None
    log_sigma2_span: float = 40.0
    bound_rtol: float = 1e-3
    stall_pgtol: float = 1e-3


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: MaternParams
    criterion_value: float
    spec: crit.CriterionSpec
    converged: bool
    n_restarts_used: int
    n_evaluations: int
    n_gradients: int
    at_bound: tuple
    range_bound: float
    objective_value: float
    message: str = ""

    @property
    def nu(self):
        return self.theta_hat.nu

    def __eq__(self, other):
        if not isinstance(other, FitResult):
            return NotImplemented
        return (
            self.theta_hat == other.theta_hat
            and self.criterion_value == other.criterion_value
            and self.spec == other.spec
            and self.converged == other.converged
            and self.n_restarts_used == other.n_restarts_used
            and self.n_evaluations == other.n_evaluations
            and self.at_bound == other.at_bound
            and self.range_bound == other.range_bound
        )


def condition_number(X, rho, nu):
    """2-norm condition number of the unit-variance correlation matrix."""
    lam = np.linalg.eigvalsh(correlation_matrix(X, rho, nu))
    if lam[0] <= 0.0:
        return np.inf
    return float(lam[-1] / lam[0])


def range_bound(nu, X, kappa=1e11, rtol=1e-3):
    """Largest isotropic range keeping cond(R) <= kappa, for X in the unit hypercube.

    Bisection (in log scale) over [1e-3, 1e3] times the diagonal of the cube.
    """
    nu = Regularity.parse(nu)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    diam = np.sqrt(d)
    lo, hi = 1e-3 * diam, 1e3 * diam
    if n == 1:
        return hi

    def cond(r):
        return condition_number(X, np.full(d, r), nu)

    if cond(lo) > kappa:
        warnings.warn(
            f"condition number exceeds {kappa:g} at the smallest probed range (nu={nu})",
            RuntimeWarning,
            stacklevel=2,
        )
        return lo
    if cond(hi) <= kappa:
        return hi
    while hi / lo > 1.0 + rtol:
        mid = np.sqrt(lo * hi)
        if cond(mid) <= kappa:
            lo = mid
        else:
            hi = mid
    return float(lo)


class RangeBoundTable:
    """Memoized range bounds keyed by (nu, design)."""

    def __init__(self, kappa=1e11, rtol=1e-3):
        self.kappa = kappa
        self.rtol = rtol
        self._cache = {}

    @staticmethod
    def signature(X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        return hashlib.sha1(X.tobytes() + str(X.shape).encode()).hexdigest()

    def bound(self, nu, X):
        nu = Regularity.parse(nu)
        key = (nu, self.signature(X))
        if key not in self._cache:
            self._cache[key] = range_bound(nu, X, self.kappa, self.rtol)
        return self._cache[key]

    def __len__(self):
        return len(self._cache)


def admissible_nu(nu_grid, X, d=None, kappa=1e11, table=None):
    """Keep the regularities whose range bound is at least 0.35 sqrt(d)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    d = X.shape[1] if d is None else d
    table = table or RangeBoundTable(kappa)
    kept = [nu for nu in map(Regularity.parse, nu_grid) if table.bound(nu, X) >= ADMISSIBLE_FACTOR * np.sqrt(d)]
    if not kept:
        raise SelectionError(
            f"no admissible regularity in {[str(Regularity.parse(v)) for v in nu_grid]} "
            f"(kappa={kappa:g}, n={X.shape[0]}, d={d})"
        )
    return kept


def common_admissible_nu(nu_grid, designs, kappa=1e11, table=None):
    """Admissible regularities for a family of similar designs.

    Uses the median range bound over the designs, so that one slightly clumped
    design does not drop a regularity the others all support.
    """
    designs = [np.atleast_2d(np.asarray(X, dtype=np.float64)) for X in designs]
    if not designs:
        raise ValueError("need at least one design")
    d = designs[0].shape[1]
    table = table or RangeBoundTable(kappa)
    kept = []
    for nu in map(Regularity.parse, nu_grid):
        L = float(np.median([table.bound(nu, X) for X in designs]))
        if L >= ADMISSIBLE_FACTOR * np.sqrt(d):
            kept.append(nu)
    if not kept:
        raise SelectionError(f"no admissible regularity for these designs (kappa={kappa:g}, d={d})")
    return kept


def _scales(config, d):
    if config.scales is None:
        return np.ones(d)
    s = np.asarray(config.scales, dtype=np.float64).reshape(-1)
    if s.size != d or np.any(s <= 0):
        raise ValueError("config.scales must hold d positive widths")
    return s


class _Tracker:
    """Wraps the objective, remembers the best feasible point seen."""

    def __init__(self, fun):
        self.fun = fun
        self.best_x = None
        self.best_f = np.inf
        self.nfev = 0

    def __call__(self, x):
        self.nfev += 1
        f, g = self.fun(x)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise FloatingPointError("non-finite criterion value")
        if f < self.best_f:
            self.best_f, self.best_x = f, x.copy()
        return f, g


def _projected_gradient(fun, x, bounds):
    lo, hi = np.array(bounds).T
    _, g = fun(x)
    return float(np.max(np.abs(x - np.clip(x - g, lo, hi))))


def _accept(res, fun, bounds, tol):
    """L-BFGS-B success, or a stalled line search at a numerically stationary point.

    Near the conditioning bound the objective is only accurate to ~1e-5, so the
    line search can fail with a small but nonzero projected gradient.
    """
    if res.success:
        return True
    if "ABNORMAL" not in str(res.message):
        return False
    try:
        return _projected_gradient(fun, res.x, bounds) <= tol * max(1.0, abs(float(res.fun)))
    except (NotPositiveDefinite, FloatingPointError, np.linalg.LinAlgError):
        return False


def _objective(spec, data, nu, joint, profile_cressie):
    d = data.d

    def fun(x):
        if joint:
            theta = MaternParams.from_log(x[0], x[1:], nu)
            return criterion_value_and_gradient(spec, theta, data)
        theta = MaternParams.from_log(0.0, x, nu)
        if spec.kind in ("nll", "hybrid"):
            v, g = criterion_value_and_gradient(crit.CriterionSpec("pl"), theta, data)
            return v, g[1:]
        if profile_cressie:
            # sigma2 is the exact minimizer, so the partial gradient is the total one
            theta = theta.with_sigma2(crit.cressie_sigma2(theta, data))
        v, g = criterion_value_and_gradient(spec, theta, data)
        return v, g[1 : 1 + d]

    return fun


def fit(spec, data, nu, config=None, table=None, starts=()):
    """Minimize a criterion over log ranges (and log sigma2 when it is selected jointly).

    ``starts`` are extra initial MaternParams tried after the random ones.
    """
    spec = crit.CriterionSpec.parse(spec)
    nu = Regularity.parse(nu)
    config = config or FitConfig()
    table = table or RangeBoundTable(config.kappa, config.bound_rtol)
    d = data.d
    scales = _scales(config, d)
    L = table.bound(nu, data.X / scales)

    ub = np.log(L * scales)
    lb = np.minimum(np.log(config.rho_min * scales), ub)
    joint = spec.kind == "loo" and spec.rule.kind in ("nlpd", "crps") and spec.sigma2_rule is None
    profile_cressie = spec.kind == "loo" and spec.rule.kind == "nlpd" and spec.sigma2_rule == "cressie"
    if spec.kind != "loo" or spec.rule.kind != "spe":
        crit._require_signal(data.z)

    rng = np.random.default_rng(config.seed)
    x0s = [lb + (ub - lb) * rng.random(d) for _ in range(config.n_starts)]
    x0s += [np.clip(np.log(t.rho), lb, ub) for t in starts]
    s2_starts = [None] * config.n_starts + [t.sigma2 for t in starts]

    bounds = list(zip(lb, ub))
    if joint:
        center = np.log(np.mean(data.z**2)) if np.any(data.z) else 0.0
        s2_lo, s2_hi = center - config.log_sigma2_span, center + config.log_sigma2_span
        bounds = [(s2_lo, s2_hi)] + bounds
        full = []
        for x0, s2 in zip(x0s, s2_starts):
            if s2 is None:
                try:
                    s2 = crit.cressie_sigma2(MaternParams.from_log(0.0, x0, nu), data)
                except (NotPositiveDefinite, crit.DegenerateData):
                    s2 = np.exp(center)
            full.append(np.concatenate([[np.clip(np.log(s2), s2_lo, s2_hi)], x0]))
        x0s = full

    fun = _objective(spec, data, nu, joint, profile_cressie)
    outcomes = []
    nfev = njev = 0
    messages = []
    for x0 in x0s:
        tracker = _Tracker(fun)
        try:
            res = scipy.optimize.minimize(
                tracker,
                x0,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": config.maxiter, "gtol": config.gtol, "ftol": config.ftol},
            )
            x, f = res.x, float(res.fun)
            ok = _accept(res, fun, bounds, config.stall_pgtol)
            if tracker.best_f < f:
                x, f = tracker.best_x, tracker.best_f
            messages.append(str(res.message))
            njev += int(res.njev) if hasattr(res, "njev") else tracker.nfev
        except (NotPositiveDefinite, FloatingPointError, np.linalg.LinAlgError) as exc:
            messages.append(f"{type(exc).__name__}: {exc}")
            x, f, ok = tracker.best_x, tracker.best_f, False
        nfev += tracker.nfev
        if x is not None and np.isfinite(f):
            outcomes.append((not ok, f, len(outcomes), x, ok))

    if not outcomes:
        raise SelectionError(f"all {len(x0s)} starts failed for {spec.name}, nu={nu}: {messages[:3]}")
    _, fbest, _, xbest, ok = min(outcomes)

    if joint:
        theta = MaternParams.from_log(xbest[0], xbest[1:], nu)
        log_rho = xbest[1:]
    else:
        theta = MaternParams.from_log(0.0, xbest, nu)
        log_rho = xbest
        theta = crit.apply_sigma2_rule(spec.sigma2_rule, theta, data)
    at_bound = tuple(bool(v) for v in log_rho >= ub - 1e-6)
    return FitResult(
        theta_hat=theta,
        criterion_value=float(crit.evaluate(spec, theta, data)),
        spec=spec,
        converged=ok,
        n_restarts_used=len(x0s),
        n_evaluations=nfev,
        n_gradients=njev,
        at_bound=at_bound,
        range_bound=float(L),
        objective_value=float(fbest),
        message="; ".join(sorted(set(messages))),
    )


def fit_grid(spec, data, nu_grid, config=None, table=None):
    """Fit every nu of the grid; failures are returned as exceptions in the mapping."""
    config = config or FitConfig()
    table = table or RangeBoundTable(config.kappa, config.bound_rtol)
    out = {}
    for nu in map(Regularity.parse, nu_grid):
        try:
            out[nu] = fit(spec, data, nu, config, table)
        except (SelectionError, NotPositiveDefinite) as exc:
            out[nu] = exc
    return out


def pick_best(fits):
    """Regularity with the smallest fitted criterion value (ties go to the smaller nu)."""
    ok = {nu: r for nu, r in fits.items() if isinstance(r, FitResult)}
    if not ok:
        raise SelectionError(f"every regularity failed: {[str(e) for e in fits.values()][:3]}")
    nu = min(ok, key=lambda v: (ok[v].criterion_value, v))
    return ok[nu], nu


def select_model(spec, data, nu_grid=None, config=None, table=None):
    """Fit the criterion for each admissible nu and keep the best; returns (FitResult, nu)."""
    spec = crit.CriterionSpec.parse(spec)
    config = config or FitConfig()
    table = table or RangeBoundTable(config.kappa, config.bound_rtol)
    if nu_grid is None or nu_grid == "auto":
        nu_grid = default_nu_grid(data.d)
    scales = _scales(config, data.d)
    grid = admissible_nu(nu_grid, data.X / scales, data.d, config.kappa, table)
    if spec.kind == "hybrid":
        _, diag = crit.hybrid_nll_spe(data, grid, config, table=table)
        return diag["fit"], diag["nu"]
    return pick_best(fit_grid(spec, data, grid, config, table))

