"""Command-line entry point: ``gpselect fit`` and ``gpselect bench``."""

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import bench, testfns
from . import criteria as crit
from .gp import Dataset, NotPositiveDefinite, loo_predictives
from .kernel import Regularity
from .scoring import ScoringRule, mean_score
from .selection import FitConfig, SelectionError, fit, select_model

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything needed to rerun a campaign; persisted as config.json next to the outputs."""

    problems: list = field(default_factory=lambda: ["goldstein-price-1d"])
    n: int = 10
    n_test: int = 2000
    m_replicates: int = 20
    criteria: list = field(default_factory=lambda: list(bench.TABLE_CRITERIA))
    # None: the default grid of each problem plus "auto"
    nu: list | None = None
    rules: list = field(default_factory=lambda: [r.name for r in bench.DEFAULT_RULES])
    sigma2_rules: dict = field(default_factory=dict)
    kappa: float = 1e11
    n_starts: int = 5
    maxiter: int = 300
    seed: int = 0
    workers: int | None = None
    out: str = "out"
    optimal: bool = True
    baselines: bool = True
    anova_preset: str = "figure"

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    def criterion_specs(self):
        out = []
        for name in self.criteria:
            rule = self.sigma2_rules.get(name, crit._DEFAULT)
            if rule == "joint":
                rule = None
            out.append(crit.CriterionSpec.parse(name, sigma2_rule=rule))
        return out

    def fit_config(self):
        return FitConfig(n_starts=self.n_starts, kappa=self.kappa, maxiter=self.maxiter, seed=self.seed)

    def validate(self):
        if not self.problems:
            raise ConfigError("no problem selected")
        for p in self.problems:
            if p not in testfns.problem_names():
                raise ConfigError(f"unknown problem {p!r}; choose from {', '.join(testfns.problem_names())}")
            d = testfns.resolve(p, self.seed)[0].d
            if self.n < d + 2:
                raise ConfigError(f"n={self.n} is too small for {p} (d={d}); need n >= d + 2")
        if self.n_test < self.n:
            raise ConfigError("n_test must be >= n")
        if self.m_replicates < 1:
            raise ConfigError("m_replicates must be >= 1")
        if not self.kappa > 1:
            raise ConfigError("kappa must exceed 1")
        if self.anova_preset not in bench.CRITERIA_PRESETS:
            raise ConfigError(f"anova_preset must be one of {sorted(bench.CRITERIA_PRESETS)}")
        try:
            specs = self.criterion_specs()
            for r in self.rules:
                ScoringRule.parse(r)
            for v in self.nu or []:
                if str(v).lower() != bench.AUTO:
                    Regularity.parse(v)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        stray = set(self.sigma2_rules) - set(self.criteria)
        if stray:
            raise ConfigError(f"sigma2_rules given for criteria not in the run: {sorted(stray)}")
        if len({s.label for s in specs}) != len(specs):
            raise ConfigError("duplicate criteria")
        return self


def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return RunConfig.from_dict(data)


def _apply_flags(cfg, args):
    if args.problem:
        cfg.problems = _split(args.problem)
    for attr in ("n", "kappa", "seed", "workers", "out"):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(cfg, attr, v)
    if args.m_replicates is not None:
        cfg.m_replicates = args.m_replicates
    if args.n_test is not None:
        cfg.n_test = args.n_test
    if getattr(args, "criteria", None):
        cfg.criteria = _split(args.criteria)
    if getattr(args, "nu", None):
        cfg.nu = _split(args.nu)
    if getattr(args, "rules", None):
        cfg.rules = _split(args.rules)
    return cfg


def _common_flags(p):
    p.add_argument("--problem", help="builtin problem name(s), comma separated")
    p.add_argument("--n", type=int, help="training design size")
    p.add_argument("--m-replicates", type=int, dest="m_replicates", help="number of designs (or collection members)")
    p.add_argument("--n-test", type=int, dest="n_test", help="size of the Sobol' test set")
    p.add_argument("--nu", help='regularities, e.g. "1/2,5/2,inf,auto"')
    p.add_argument("--kappa", type=float, help="condition number threshold for the range bound")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="gpselect", description="Gaussian-process interpolation model selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("fit", help="fit one criterion on a builtin problem or a data file")
    _common_flags(pf)
    pf.add_argument("--data", help="delimited file: header, d input columns, one output column")
    pf.add_argument("--criterion", default="NLL", help='e.g. NLL, LOO-CRPS, GCV, "HL(2,-1)"')
    pf.add_argument("--sigma2-rule", dest="sigma2_rule", choices=["profiling", "cressie", "joint"])
    pf.add_argument("--theta-out", dest="theta_out", help="write the fitted parameters to this JSON file")
    pf.set_defaults(func=cmd_fit, criteria=None, rules=None, workers=None)

    pb = sub.add_parser("bench", help="run a benchmark campaign")
    _common_flags(pb)
    pb.add_argument("--config", help="JSON run configuration; flags override its values")
    pb.add_argument("--criteria", help="comma-separated criteria")
    pb.add_argument("--rules", help="comma-separated scoring rules (SPE, NLPD, CRPS, IS95)")
    pb.add_argument("--workers", type=int, help="worker processes (default: available cores)")
    pb.set_defaults(func=cmd_bench)
    return parser


# fit


def _fit_dataset(args):
    """Returns (Dataset, FitConfig scales, description dict)."""
    if args.data and args.problem:
        raise ConfigError("give either --data or --problem, not both")
    if args.data:
        try:
            X, y, header = testfns.load_table(args.data)
        except OSError as exc:
            raise ConfigError(f"cannot read {args.data}: {exc.strerror}") from None
        except testfns.TableParseError as exc:
            raise ConfigError(str(exc)) from None
        widths = X.max(axis=0) - X.min(axis=0)
        if np.any(widths <= 0):
            raise ConfigError("every input column must take at least two values")
        mean, scale = float(y.mean()), float(y.std())
        if scale == 0.0:
            raise ConfigError("output column is constant")
        try:
            data = Dataset(X, (y - mean) / scale)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return data, tuple(float(w) for w in widths), {"source": args.data, "inputs": header[:-1], "mean": mean, "scale": scale}
    name = args.problem or "goldstein-price-1d"
    if "," in name or name not in testfns.problem_names():
        raise ConfigError(f"unknown problem {name!r}; choose from {', '.join(testfns.problem_names())}")
    n = args.n if args.n is not None else 10
    seed = args.seed if args.seed is not None else 0
    N = args.n_test if args.n_test is not None else 2000
    d = testfns.resolve(name, seed)[0].d
    if n < d + 2 or N < n:
        raise ConfigError(f"need n >= d + 2 = {d + 2} and n-test >= n")
    b = bench.bundle_for(name, 0, n, N, 1, seed)
    return b.dataset(), None, {"source": name, "n": n, "seed": seed, "mean": b.mean, "scale": b.scale}


def _loo_report(theta, data):
    p = loo_predictives(theta, data)
    resid = data.z - p.mu
    std = resid / np.sqrt(p.sigma2)
    return {
        "LOO-SPE": mean_score(ScoringRule("spe"), p, data.z),
        "LOO-NLPD": mean_score(ScoringRule("nlpd"), p, data.z),
        "LOO-CRPS": mean_score(ScoringRule("crps"), p, data.z),
        "max |standardized residual|": float(np.max(np.abs(std))),
        # equals one when sigma2 follows Cressie's rule
        "Cressie statistic": float(np.mean(std**2)),
    }


def cmd_fit(args):
    data, scales, info = _fit_dataset(args)
    rule = crit._DEFAULT
    if args.sigma2_rule:
        rule = None if args.sigma2_rule == "joint" else args.sigma2_rule
    try:
        spec = crit.CriterionSpec.parse(args.criterion, sigma2_rule=rule)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    config = FitConfig(kappa=args.kappa or 1e11, seed=args.seed or 0, scales=scales)
    nus = _split(args.nu) if args.nu else [bench.AUTO]
    try:
        if nus == [bench.AUTO]:
            res, nu = select_model(spec, data, "auto", config)
        elif len(nus) == 1:
            nu = Regularity.parse(nus[0])
            res = fit(spec, data, nu, config)
        else:
            res, nu = select_model(spec, data, [v for v in nus if v != bench.AUTO], config)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    t = res.theta_hat
    lines = [
        f"data         {info['source']} (n={data.n}, d={data.d})",
        f"criterion    {spec.label} (sigma2 rule: {spec.sigma2_rule or 'joint'})",
        f"nu           {nu}" + ("  (selected)" if len(nus) > 1 or nus == [bench.AUTO] else ""),
        f"sigma2       {t.sigma2:.6g}",
        "rho          " + " ".join(f"{r:.6g}" for r in t.rho),
        f"value        {res.criterion_value:.10g}",
        f"converged    {res.converged} ({res.n_restarts_used} starts, {res.n_evaluations} evaluations)",
        f"range bound  {res.range_bound:.6g}" + ("  (reached)" if any(res.at_bound) else ""),
    ]
    report = _loo_report(t, data)
    lines += [f"{k:<28} {v:.6g}" for k, v in report.items()]
    print("\n".join(lines))
    if args.theta_out:
        out = {
            "criterion": spec.label,
            "nu": str(nu),
            "sigma2": t.sigma2,
            "rho": [float(r) for r in t.rho],
            "criterion_value": res.criterion_value,
            "converged": res.converged,
            "normalization": {"mean": info["mean"], "scale": info["scale"]},
            "loo": report,
        }
        with open(args.theta_out, "w") as fh:
            json.dump(out, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


# bench


def _summary(records, problem, rule, cfg):
    table = bench.mean_table(records, problem, rule)
    cells = [
        {"criterion": c, "nu": nu, "mean_R": m, "stderr": se, "replicates": cnt, "failures": f}
        for (c, nu), (m, se, cnt, f) in sorted(table.items(), key=lambda kv: (kv[0][0], bench._nu_order(kv[0][1])))
    ]
    anova = {}
    for preset in ("figure", "table"):
        wanted = [c for c in bench.CRITERIA_PRESETS[preset]]
        labels = {s.name: s.label for s in cfg.criterion_specs()}
        if all(c in labels for c in wanted):
            try:
                anova[preset] = bench.anova_decompose(records, problem, rule, [labels[c] for c in wanted]).as_dict()
            except ValueError as exc:
                anova[preset] = {"error": str(exc)}
    return {
        "problem": problem,
        "rule": ScoringRule.parse(rule).name,
        "cells": cells,
        "anova": anova,
        "selected_nu": {s.label: bench.selected_nu_counts(records, problem, s.label) for s in cfg.criterion_specs()},
        "failed_records": sum(1 for r in records if r.problem == problem and r.rule == ScoringRule.parse(rule).name and r.failed),
    }


def _clean(obj):
    """NaN is not JSON; write null instead."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def cmd_bench(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = _apply_flags(cfg, args).validate()
    workers = cfg.workers if cfg.workers is not None else (os.cpu_count() or 1)
    records = bench.run_campaign(
        cfg.problems,
        cfg.n,
        cfg.n_test,
        cfg.m_replicates,
        cfg.criterion_specs(),
        cfg.nu,
        cfg.rules,
        cfg.seed,
        config=cfg.fit_config(),
        workers=workers,
        optimal=cfg.optimal,
        baselines=cfg.baselines,
    )
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    bench.write_records(records, os.path.join(cfg.out, "records.csv"))

    blocks = []
    for problem in cfg.problems:
        for rule in cfg.rules:
            name = ScoringRule.parse(rule).name
            summary = _summary(records, problem, rule, cfg)
            with open(os.path.join(cfg.out, f"summary_{problem}_{name}.json"), "w") as fh:
                json.dump(_clean(summary), fh, indent=2, sort_keys=True)
                fh.write("\n")
            head = f"{problem}, n={cfg.n}, M={cfg.m_replicates}, {name}"
            text = bench.format_table(records, problem, rule)
            an = summary["anova"].get(cfg.anova_preset)
            if an and "S_nu" in an and an["S_nu"] is not None and math.isfinite(an["S_nu"]):
                text += (
                    f"\nANOVA ({cfg.anova_preset}): S_criterion={an['S_criterion']:.3f} S_nu={an['S_nu']:.3f}"
                    f" S_int={an['S_int']:.3f} V={an['total_variance']:.3f} excluded_nu={an['excluded_nu']}"
                )
            blocks.append(head + "\n" + text)
    report = "\n\n".join(blocks) + "\n"
    with open(os.path.join(cfg.out, "tables.txt"), "w") as fh:
        fh.write(report)
    print(report, end="")

    fitted = [r for r in records if r.nu != bench.NO_NU]
    failed = sum(r.failed for r in fitted)
    if failed:
        print(f"{failed} of {len(fitted)} fitted records failed", file=sys.stderr)
    if fitted and failed == len(fitted):
        return EXIT_FAILURE
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"gpselect: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SelectionError, NotPositiveDefinite) as exc:
        print(f"gpselect: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
