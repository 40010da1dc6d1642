"""Benchmark protocol: per-criterion fits, test-set scores, optimal R*, baselines, ANOVA."""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
from scipy.spatial import cKDTree

from . import criteria as crit
from . import testfns
from .gp import NotPositiveDefinite, predict
from .gradients import score_value_and_gradient
from .kernel import MaternParams, Regularity, default_nu_grid
from .scoring import CRPS, IS95, NLPD, SPE, ScoringRule, _score
from .selection import (
    FitConfig,
    FitResult,
    RangeBoundTable,
    SelectionError,
    _Tracker,
    _scales,
    admissible_nu,
    common_admissible_nu,
    fit,
    pick_best,
)

DEFAULT_RULES = (SPE, NLPD, CRPS, IS95)
TABLE_CRITERIA = ("NLL", "LOO-SPE", "LOO-NLPD", "LOO-CRPS", "KA", "GCV")
# the variance-decomposition figure leaves out KA and GCV
CRITERIA_PRESETS = {
    "table": TABLE_CRITERIA,
    "figure": ("NLL", "LOO-SPE", "LOO-NLPD", "LOO-CRPS"),
}
OPTIMAL = "R*"
BASELINES = ("linear", "1NN", "2NN")
AUTO = "auto"
NO_NU = "-"
_FIT_ERRORS = (SelectionError, NotPositiveDefinite, crit.DegenerateData, np.linalg.LinAlgError, FloatingPointError)


@dataclass(frozen=True)
class BenchmarkRecord:
    """One R(theta; S) value. ``nu`` is a regularity, "auto" or "-" (baselines)."""

    problem: str
    d: int
    n: int
    replicate: int
    criterion: str
    nu: str
    rule: str
    R: float
    converged: bool
    sigma2: float = math.nan
    rho: tuple = ()
    criterion_value: float = math.nan
    selected_nu: str = ""
    message: str = field(default="", compare=False)

    @property
    def failed(self):
        return not math.isfinite(self.R)


# test-set quality


def evaluate_R(theta, bundle, rule):
    """Test-set mean score R(theta; S) on a DesignBundle."""
    return evaluate_rules(theta, bundle, [rule])[0]


def evaluate_rules(theta, bundle, rules):
    """R(theta; S) for several rules from a single prediction pass."""
    p = predict(theta, bundle.dataset(), bundle.X_test)
    return [float(np.mean(_score(ScoringRule.parse(r), p.mu, p.sigma2, bundle.z_test))) for r in rules]


def optimal_R_star(bundle, rule, nu, config=None, table=None, starts=(), n_polish=2):
    """Direct minimization of R(theta; S) over (log sigma2, log rho).

    The search box is the one used by the criterion fits. Every MaternParams in
    ``starts`` is a candidate, so R* never exceeds their R; quasi-Newton runs
    start from the ``n_polish`` best distinct ones plus seeded random points.
    Returns ``(theta_star, R_star)``.
    """
    rule = ScoringRule.parse(rule)
    nu = Regularity.parse(nu)
    config = config or FitConfig()
    table = table or RangeBoundTable(config.kappa, config.bound_rtol)
    data = bundle.dataset()
    d = data.d
    scales = _scales(config, d)
    L = table.bound(nu, data.X / scales)
    ub = np.log(L * scales)
    lb = np.minimum(np.log(config.rho_min * scales), ub)
    blind = rule.kind == "spe"

    center = float(np.log(np.mean(data.z**2))) if np.any(data.z) else 0.0
    s2_lo, s2_hi = center - config.log_sigma2_span, center + config.log_sigma2_span
    bounds = list(zip(lb, ub)) if blind else [(s2_lo, s2_hi)] + list(zip(lb, ub))

    def to_x(t):
        log_rho = np.clip(np.log(t.rho), lb, ub)
        return log_rho if blind else np.concatenate([[np.clip(np.log(t.sigma2), s2_lo, s2_hi)], log_rho])

    def to_theta(x):
        if blind:
            return MaternParams.from_log(0.0, x, nu)
        return MaternParams.from_log(x[0], x[1:], nu)

    def fun(x):
        v, g = score_value_and_gradient(to_theta(x), data, bundle.X_test, bundle.z_test, rule)
        return v, (g[1:] if blind else g)

    def value(theta):
        try:
            return evaluate_R(theta, bundle, rule)
        except NotPositiveDefinite:
            return np.inf

    warm = {}
    for t in starts:
        if t.nu != nu:
            raise ValueError("warm starts must share the regularity")
        x = to_x(t)
        # in-box starts are scored as given: rescaling sigma2 is exact only in exact arithmetic
        inside = np.array_equal(to_theta(x).log_vector()[1:], np.log(t.rho))
        inside = inside and (blind or s2_lo <= np.log(t.sigma2) <= s2_hi)
        warm.setdefault(t.log_vector().tobytes(), (x, t if inside else to_theta(x)))
    scored = sorted(((value(t), i, x, t) for i, (x, t) in enumerate(warm.values())), key=lambda c: c[:2])
    candidates = [(v, t) for v, _, _, t in scored]
    x0s = [x for v, _, x, _ in scored[:n_polish] if np.isfinite(v)]

    rng = np.random.default_rng(config.seed)
    for _ in range(config.n_starts if not starts else 1):
        log_rho = lb + (ub - lb) * rng.random(d)
        theta = MaternParams.from_log(0.0, log_rho, nu)
        if not blind:
            try:
                theta = crit.apply_sigma2_rule("profiling", theta, data)
            except _FIT_ERRORS:
                pass
        x0s.append(to_x(theta))

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
            x = res.x if res.fun <= tracker.best_f else tracker.best_x
        except (NotPositiveDefinite, FloatingPointError, np.linalg.LinAlgError):
            x = tracker.best_x
        if x is not None:
            t = to_theta(x)
            candidates.append((value(t), t))

    best_R, best_theta = min(candidates, key=lambda c: c[0], default=(np.inf, None))
    if not np.isfinite(best_R):
        raise SelectionError(f"optimal R* failed for nu={nu}, rule={rule.name}")
    return best_theta, float(best_R)


def baselines(bundle):
    """SPE of the linear least-squares and 1NN/2NN predictors on the test set.

    Returns a dict name -> R; the linear entry is None when the design is rank deficient.
    """
    X, z, Xt, zt = bundle.X, bundle.z, bundle.X_test, bundle.z_test
    n, d = X.shape
    out = {}
    A = np.column_stack([np.ones(n), X])
    if n >= d + 1 and np.linalg.matrix_rank(A) == d + 1:
        coef = np.linalg.lstsq(A, z, rcond=None)[0]
        pred = np.column_stack([np.ones(len(Xt)), Xt]) @ coef
        out["linear"] = float(np.mean((zt - pred) ** 2))
    else:
        out["linear"] = None
    tree = cKDTree(X)
    for k in (1, 2):
        _, idx = tree.query(Xt, k=k)
        pred = z[idx] if k == 1 else z[idx].mean(axis=1)
        out[f"{k}NN"] = float(np.mean((zt - pred) ** 2))
    return out


# campaign


@dataclass(frozen=True)
class CampaignSpec:
    n: int
    N: int
    M: int
    criteria: tuple
    nu_grid: tuple
    rules: tuple
    seed: int
    config: FitConfig = FitConfig()
    auto: bool = True
    optimal: bool = True
    baselines: bool = True
    # problem -> admissible regularities shared by all its replicates
    auto_grids: tuple = ()


def _nu_order(nu):
    if nu == AUTO:
        return (1, math.inf)
    if nu == NO_NU:
        return (2, math.inf)
    r = Regularity.parse(nu)
    return (0, math.inf if r.is_gaussian else r.chi)


def bundle_for(problem, replicate, n, N, M, seed):
    """Rebuild the DesignBundle of one replicate (collections share one training design)."""
    members = testfns.resolve(problem, seed, count=M)
    X_test = testfns.sobol_points(N, members[0].d)
    if testfns.is_collection(problem):
        X = testfns.training_design(n, members[0].d, seed, 0)
        return testfns.make_bundle(members[replicate], X, X_test, replicate)
    p = members[0]
    if n < p.d + 2:
        raise ValueError("need n >= d + 2")
    return testfns.make_bundle(p, testfns.training_design(n, p.d, seed, replicate), X_test, replicate)


def _fit_records(bundle, crit_name, nu_label, res, rules, selected=""):
    base = dict(problem=bundle.problem, d=bundle.d, n=bundle.n, replicate=bundle.replicate, criterion=crit_name, nu=nu_label)
    if isinstance(res, Exception):
        msg = f"{type(res).__name__}: {res}"
        return [BenchmarkRecord(**base, rule=r.name, R=math.nan, converged=False, message=msg) for r in rules]
    try:
        values = evaluate_rules(res.theta_hat, bundle, rules)
    except NotPositiveDefinite as exc:
        values, msg = [math.nan] * len(rules), f"prediction failed: {exc}"
    else:
        msg = res.message
    t = res.theta_hat
    return [
        BenchmarkRecord(
            **base,
            rule=r.name,
            R=v,
            converged=res.converged,
            sigma2=float(t.sigma2),
            rho=tuple(float(x) for x in t.rho),
            criterion_value=res.criterion_value,
            selected_nu=selected,
            message=msg,
        )
        for r, v in zip(rules, values)
    ]


def run_bundle(bundle, spec):
    """All records for one DesignBundle."""
    cfg = spec.config
    rules = [ScoringRule.parse(r) for r in spec.rules]
    specs = [crit.CriterionSpec.parse(c) for c in spec.criteria]
    fixed = [Regularity.parse(v) for v in spec.nu_grid]
    data = bundle.dataset()
    table = RangeBoundTable(cfg.kappa, cfg.bound_rtol)
    auto_grid, auto_error = [], None
    shared = dict(spec.auto_grids)
    if spec.auto and bundle.problem in shared:
        auto_grid = [Regularity.parse(v) for v in shared[bundle.problem]]
        if not auto_grid:
            auto_error = SelectionError("no admissible regularity for this problem")
    elif spec.auto:
        try:
            auto_grid = admissible_nu(default_nu_grid(bundle.d), data.X / _scales(cfg, bundle.d), bundle.d, cfg.kappa, table)
        except SelectionError as exc:
            auto_error = exc

    records = []
    fits = {}
    for cs in specs:
        for nu in dict.fromkeys(fixed + auto_grid):
            try:
                fits[cs.label, nu] = fit(cs, data, nu, cfg, table)
            except _FIT_ERRORS as exc:
                fits[cs.label, nu] = exc
        for nu in fixed:
            records += _fit_records(bundle, cs.label, str(nu), fits[cs.label, nu], rules)
        if spec.auto:
            if auto_error is not None:
                records += _fit_records(bundle, cs.label, AUTO, auto_error, rules)
                continue
            try:
                best, nu_best = pick_best({nu: fits[cs.label, nu] for nu in auto_grid})
            except SelectionError as exc:
                records += _fit_records(bundle, cs.label, AUTO, exc, rules)
            else:
                records += _fit_records(bundle, cs.label, AUTO, best, rules, selected=str(nu_best))

    if spec.optimal:
        for nu in fixed:
            starts = [fits[cs.label, nu].theta_hat for cs in specs if isinstance(fits[cs.label, nu], FitResult)]
            for r in rules:
                try:
                    t, R = optimal_R_star(bundle, r, nu, cfg, table, starts)
                except _FIT_ERRORS as exc:
                    records += _fit_records(bundle, OPTIMAL, str(nu), exc, [r])
                    continue
                records.append(
                    BenchmarkRecord(
                        bundle.problem, bundle.d, bundle.n, bundle.replicate, OPTIMAL, str(nu), r.name, R, True,
                        float(t.sigma2), tuple(float(x) for x in t.rho),
                    )
                )

    if spec.baselines:
        for name, R in baselines(bundle).items():
            records.append(
                BenchmarkRecord(
                    bundle.problem, bundle.d, bundle.n, bundle.replicate, name, NO_NU, SPE.name,
                    math.nan if R is None else R, R is not None,
                    message="" if R is not None else "rank-deficient design",
                )
            )
    return records


def _run_unit(args):
    problem, replicate, spec = args
    b = bundle_for(problem, replicate, spec.n, spec.N, spec.M, spec.seed)
    return run_bundle(b, spec)


def shared_auto_grid(problem, n, M, seed, config):
    """Automatic-selection grid of a problem, from the median range bound over its designs."""
    member = testfns.resolve(problem, seed, count=max(M, 1))[0]
    reps = 1 if testfns.is_collection(problem) else M
    scales = _scales(config, member.d)
    designs = [testfns.training_design(n, member.d, seed, r) / scales for r in range(reps)]
    try:
        grid = common_admissible_nu(default_nu_grid(member.d), designs, config.kappa)
    except SelectionError:
        return ()
    return tuple(str(nu) for nu in grid)


def _criterion_order(name, criteria):
    names = [crit.CriterionSpec.parse(c).label for c in criteria]
    if name in names:
        return (0, names.index(name))
    if name == OPTIMAL:
        return (1, 0)
    return (2, BASELINES.index(name) if name in BASELINES else 99)


def canonical_sort(records, criteria=TABLE_CRITERIA, rules=DEFAULT_RULES):
    rule_names = [ScoringRule.parse(r).name for r in rules]

    def key(r):
        return (
            r.problem,
            r.replicate,
            _criterion_order(r.criterion, criteria),
            _nu_order(r.nu),
            rule_names.index(r.rule) if r.rule in rule_names else 99,
        )

    return sorted(records, key=key)


def run_campaign(
    problems, n, N, M, criteria, nu_grid, rules, seed, config=None, workers=1, optimal=True, baselines=True, common_bounds=True
):
    """Fit every (problem, replicate, criterion, nu) cell and score it under every rule.

    ``nu_grid`` None means each problem's default grid plus "auto". It may contain
    "auto" to add automatic selection over the admissible
    default grid; with ``common_bounds`` admissibility is decided once per problem
    from the median range bound of its designs, otherwise per design.
    Collections use their first M members as replicates.
    Work units are whole replicates; the output order does not depend on ``workers``.
    """
    config = config or FitConfig()
    if nu_grid is None:
        out = []
        for p in problems:
            d = testfns.resolve(p, seed, count=max(M, 1))[0].d
            grid = [str(v) for v in default_nu_grid(d)] + [AUTO]
            out += run_campaign([p], n, N, M, criteria, grid, rules, seed, config, workers, optimal, baselines, common_bounds)
        return canonical_sort(out, [crit.CriterionSpec.parse(c).label for c in criteria], rules)
    grid = [v for v in nu_grid if str(v).strip().lower() != AUTO]
    auto = len(grid) != len(nu_grid)
    for p in problems:
        testfns.resolve(p, seed, count=max(M, 1))
    auto_grids = ()
    if auto and common_bounds:
        auto_grids = tuple((p, shared_auto_grid(p, n, M, seed, config)) for p in problems)
    spec = CampaignSpec(
        n=n,
        N=N,
        M=M,
        criteria=tuple(crit.CriterionSpec.parse(c).label for c in criteria),
        nu_grid=tuple(str(Regularity.parse(v)) for v in grid),
        rules=tuple(ScoringRule.parse(r).name for r in rules),
        seed=seed,
        config=config,
        auto=auto,
        optimal=optimal,
        baselines=baselines,
        auto_grids=auto_grids,
    )
    units = [(p, r, spec) for p in problems for r in range(M)]
    if workers and workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_unit, units))
    else:
        chunks = [_run_unit(u) for u in units]
    return canonical_sort([r for c in chunks for r in c], spec.criteria, spec.rules)


# output


def _fmt(x):
    return repr(float(x))


def records_to_csv(records):
    """Delimited text with one line per record; floats written with repr for exact round trips."""
    dmax = max((r.d for r in records), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["problem", "d", "n", "replicate", "criterion", "nu", "rule", "R", "converged", "sigma2"] + [f"rho_{j + 1}" for j in range(dmax)])
    for r in records:
        rho = [_fmt(x) for x in r.rho] + [""] * (dmax - len(r.rho))
        w.writerow([r.problem, r.d, r.n, r.replicate, r.criterion, r.nu, r.rule, _fmt(r.R), int(r.converged), _fmt(r.sigma2)] + rho)
    return buf.getvalue()


def write_records(records, path):
    with open(path, "w", newline="") as fh:
        fh.write(records_to_csv(records))


def read_records(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        d = int(row["d"])
        out.append(
            BenchmarkRecord(
                row["problem"], d, int(row["n"]), int(row["replicate"]), row["criterion"], row["nu"], row["rule"],
                float(row["R"]), row["converged"] == "1", float(row["sigma2"]),
                tuple(float(row[f"rho_{j + 1}"]) for j in range(d) if row.get(f"rho_{j + 1}")),
            )
        )
    return out


# summaries


def mean_table(records, problem, rule):
    """(criterion, nu) -> (mean R, standard error, number of replicates, number of failures)."""
    rule = ScoringRule.parse(rule).name
    cells = {}
    for r in records:
        if r.problem == problem and r.rule == rule:
            cells.setdefault((r.criterion, r.nu), []).append(r.R)
    out = {}
    for key, vals in cells.items():
        v = np.asarray(vals)
        ok = v[np.isfinite(v)]
        fails = int(v.size - ok.size)
        if fails or ok.size == 0:
            out[key] = (math.nan, math.nan, int(v.size), fails)
        else:
            se = float(ok.std(ddof=1) / np.sqrt(ok.size)) if ok.size > 1 else 0.0
            out[key] = (float(ok.mean()), se, int(v.size), 0)
    return out


@dataclass(frozen=True)
class AnovaSummary:
    S_criterion: float
    S_nu: float
    S_int: float
    total_variance: float
    criteria: tuple = ()
    nus: tuple = ()
    n_excluded: int = 0

    @property
    def defined(self):
        return self.total_variance > 0.0

    def as_dict(self):
        return {
            "S_criterion": self.S_criterion,
            "S_nu": self.S_nu,
            "S_int": self.S_int,
            "total_variance": self.total_variance,
            "criteria": list(self.criteria),
            "nu": list(self.nus),
            "excluded_nu": self.n_excluded,
        }


def anova_two_factor(Y, criteria=(), nus=(), n_excluded=0):
    """Two-factor decomposition of the variance of a (criterion x nu) grid."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.size == 0:
        raise ValueError("need a non-empty 2-D grid")
    grand = Y.mean()
    V = float(np.mean((Y - grand) ** 2))
    if V == 0.0:
        return AnovaSummary(math.nan, math.nan, math.nan, 0.0, tuple(criteria), tuple(nus), n_excluded)
    a = Y.mean(axis=1) - grand
    b = Y.mean(axis=0) - grand
    inter = Y - grand - a[:, None] - b[None, :]
    return AnovaSummary(
        float(np.mean(a**2) / V),
        float(np.mean(b**2) / V),
        float(np.mean(inter**2) / V),
        V,
        tuple(criteria),
        tuple(nus),
        n_excluded,
    )


def anova_decompose(records, problem, rule, criteria="table", nus=None):
    """ANOVA of log10(replicate-averaged R) over fixed regularities.

    ``criteria`` is a preset name or a list of criterion names. Regularities with a
    failed or non-positive cell are dropped listwise; their count is reported.
    """
    if isinstance(criteria, str):
        criteria = CRITERIA_PRESETS[criteria]
    criteria = [crit.CriterionSpec.parse(c).label for c in criteria]
    table = mean_table(records, problem, rule)
    if nus is None:
        nus = sorted({nu for (c, nu) in table if c in criteria and nu not in (AUTO, NO_NU)}, key=_nu_order)
    missing = [c for c in criteria if not any((c, nu) in table for nu in nus)]
    if missing:
        raise ValueError(f"no records for criteria {missing}")
    kept, excluded = [], 0
    for nu in nus:
        col = [table.get((c, nu), (math.nan,))[0] for c in criteria]
        if all(math.isfinite(v) and v > 0 for v in col):
            kept.append(nu)
        else:
            excluded += 1
    if not kept:
        return AnovaSummary(math.nan, math.nan, math.nan, 0.0, tuple(criteria), (), excluded)
    Y = np.log10([[table[c, nu][0] for nu in kept] for c in criteria])
    return anova_two_factor(Y, criteria, kept, excluded)


def format_table(records, problem, rule):
    """Plain-text (nu x criterion) table of mean R with standard errors."""
    rule = ScoringRule.parse(rule).name
    table = mean_table(records, problem, rule)
    crits = []
    for r in records:
        if r.problem == problem and r.nu != NO_NU and r.criterion not in crits:
            crits.append(r.criterion)
    nus = sorted({nu for (_, nu) in table if nu != NO_NU}, key=_nu_order)
    head = [f"R({rule})"] + crits
    rows = []
    for nu in nus:
        label = "nu = " + nu if nu != AUTO else "nu auto"
        cells = []
        for c in crits:
            m, se, _, fails = table.get((c, nu), (math.nan, math.nan, 0, 0))
            cells.append("-" if (c, nu) not in table else (f"failed ({fails})" if fails else f"{m:.3g} ({se:.2g})"))
        rows.append([label] + cells)
    widths = [max(len(x[i]) for x in [head] + rows) for i in range(len(head))]
    lines = ["  ".join(s.ljust(w) for s, w in zip(row, widths)) for row in [head] + rows]
    base = [(b, table[b, NO_NU]) for b in BASELINES if (b, NO_NU) in table]
    if base:
        lines.append("baselines: " + ", ".join(f"{b} {v[0]:.3g}" for b, v in base))
    return "\n".join(lines)


def selected_nu_counts(records, problem, criterion):
    """How often each regularity was picked by automatic selection."""
    counts = {}
    for r in records:
        if r.problem == problem and r.criterion == criterion and r.nu == AUTO and r.selected_nu and r.rule == SPE.name:
            counts[r.selected_nu] = counts.get(r.selected_nu, 0) + 1
    return dict(sorted(counts.items(), key=lambda kv: _nu_order(kv[0])))
