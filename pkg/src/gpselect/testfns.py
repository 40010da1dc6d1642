"""Benchmark test functions, space-filling designs and tabulated datasets."""

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    d: int
    lower: np.ndarray
    upper: np.ndarray
    func: object
    family_index: int | None = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.size != self.d or hi.size != self.d or np.any(hi <= lo):
            raise ValueError(f"bad input box for {self.name}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def widths(self):
        return self.upper - self.lower

    def to_box(self, u):
        """Map unit-hypercube points into the input box."""
        return self.lower + np.asarray(u, dtype=np.float64) * self.widths


def eval_problem(p, x):
    """Evaluate ``p`` at one point (d,) or a batch (m, d) given in box coordinates."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != p.d:
        raise ValueError(f"{p.name} expects points of dimension {p.d}")
    tol = 1e-12 * p.widths
    if np.any(xb < p.lower - tol) or np.any(xb > p.upper + tol):
        raise ValueError(f"point outside the input box of {p.name}")
    y = np.asarray(p.func(xb), dtype=np.float64)
    return float(y[0]) if single else y


# literature functions, vectorized over rows


def goldstein_price(x):
    x1, x2 = x[:, 0], x[:, 1]
    a = 1.0 + (x1 + x2 + 1.0) ** 2 * (19.0 - 14.0 * x1 + 3.0 * x1**2 - 14.0 * x2 + 6.0 * x1 * x2 + 3.0 * x2**2)
    b = 30.0 + (2.0 * x1 - 3.0 * x2) ** 2 * (18.0 - 32.0 * x1 + 12.0 * x1**2 + 48.0 * x2 - 36.0 * x1 * x2 + 27.0 * x2**2)
    return a * b


_GP1D_END = np.array([2.0 / 3.0, -2.0])
_GP1D_START = np.array([-2.0, 2.0])


def goldstein_price_1d(t):
    """Section of Goldstein-Price from the corner (-2, 2) (t=0) to (2/3, -2) (t=1)."""
    t = np.asarray(t, dtype=np.float64)
    scalar = t.ndim == 0
    tt = t.reshape(-1)
    if np.any((tt < 0.0) | (tt > 1.0)):
        raise ValueError("t must lie in [0, 1]")
    pts = tt[:, None] * _GP1D_END + (1.0 - tt[:, None]) * _GP1D_START
    y = goldstein_price(pts)
    return float(y[0]) if scalar else y.reshape(t.shape)


def mystery(x):
    x1, x2 = x[:, 0], x[:, 1]
    return (
        2.0
        + 0.01 * (x2 - x1**2) ** 2
        + (1.0 - x1) ** 2
        + 2.0 * (2.0 - x2) ** 2
        + 7.0 * np.sin(0.5 * x1) * np.sin(0.7 * x1 * x2)
    )


BOREHOLE_LOWER = np.array([0.05, 100.0, 63070.0, 990.0, 63.1, 700.0, 1120.0, 9855.0])
BOREHOLE_UPPER = np.array([0.15, 50000.0, 115600.0, 1110.0, 116.0, 820.0, 1680.0, 12045.0])


def borehole(x):
    """Water flow rate; inputs (rw, r, Tu, Hu, Tl, Hl, L, Kw)."""
    rw, r, tu, hu, tl, hl, length, kw = (x[:, j] for j in range(8))
    lg = np.log(r / rw)
    return 2.0 * np.pi * tu * (hu - hl) / (lg * (1.0 + 2.0 * length * tu / (lg * rw**2 * kw) + tu / tl))


def rosenbrock(x):
    return np.sum(100.0 * (x[:, 1:] - x[:, :-1] ** 2) ** 2 + (1.0 - x[:, :-1]) ** 2, axis=1)


def _householder_orthogonal(d, rng):
    """Product of d random Householder reflections."""
    Q = np.eye(d)
    for _ in range(d):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        Q = Q - 2.0 * np.outer(Q @ v, v)
    return Q


@dataclass(frozen=True)
class RotatedRosenbrock:
    """x -> Rosenbrock(Q (x - c))."""

    Q: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)

    def __call__(self, x):
        return rosenbrock((x - self.c) @ self.Q.T)


def rotated_rosenbrock_family(d, count, seed=0):
    """Rosenbrock(Q_k (x - c_k)) on [-5, 5]^d with the minimizer kept inside [-4, 4]^d."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng([seed, d])
    out = []
    for k in range(count):
        Q = _householder_orthogonal(d, rng)
        xstar = rng.uniform(-4.0, 4.0, d)
        c = xstar - Q.T @ np.ones(d)
        out.append(Problem(f"rotated-rosenbrock-{d}d", d, np.full(d, -5.0), np.full(d, 5.0), RotatedRosenbrock(Q, c), family_index=k))
    return out


def builtin_problems():
    return {
        "goldstein-price": Problem("goldstein-price", 2, [-2.0, -2.0], [2.0, 2.0], goldstein_price),
        "goldstein-price-1d": Problem("goldstein-price-1d", 1, [0.0], [1.0], lambda x: goldstein_price_1d(x[:, 0])),
        "mystery": Problem("mystery", 2, [0.0, 0.0], [5.0, 5.0], mystery),
        "borehole": Problem("borehole", 8, BOREHOLE_LOWER, BOREHOLE_UPPER, borehole),
        "rosenbrock-2d": Problem("rosenbrock-2d", 2, [-5.0] * 2, [5.0] * 2, rosenbrock),
        "rosenbrock-5d": Problem("rosenbrock-5d", 5, [-5.0] * 5, [5.0] * 5, rosenbrock),
    }


# collections: one member per replicate, all members on a shared design
COLLECTIONS = {"rotated-rosenbrock-2d": 2, "rotated-rosenbrock-5d": 5}
COLLECTION_SIZE = 15


def problem_names():
    return sorted(builtin_problems()) + sorted(COLLECTIONS)


def is_collection(name):
    return name in COLLECTIONS


def resolve(name, seed=0, count=COLLECTION_SIZE):
    """Return a list of Problems: one for single functions, ``count`` members for a collection."""
    if name in COLLECTIONS:
        return rotated_rosenbrock_family(COLLECTIONS[name], count, seed)
    problems = builtin_problems()
    if name not in problems:
        raise KeyError(f"unknown problem {name!r}; choose from {problem_names()}")
    return [problems[name]]


# designs


def latin_hypercube(n, d, rng):
    perms = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    return (perms + rng.random((n, d))) / n


def _min_dist(X):
    diff = X[:, None, :] - X[None, :, :]
    d2 = np.sum(diff * diff, axis=2)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min()))


def maximin_lhs(n, d, rng, n_candidates=20, n_swaps=200):
    """Latin hypercube improved for the maximin distance by best-of and column swaps."""
    best = max((latin_hypercube(n, d, rng) for _ in range(n_candidates)), key=_min_dist)
    score = _min_dist(best)
    if n < 2:
        return best
    for _ in range(n_swaps):
        j = rng.integers(d)
        a, b = rng.choice(n, size=2, replace=False)
        cand = best.copy()
        cand[[a, b], j] = cand[[b, a], j]
        s = _min_dist(cand)
        if s > score:
            best, score = cand, s
    return best


def sobol_points(N, d):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return qmc.Sobol(d, scramble=False).random(N)


@dataclass(frozen=True, eq=False)
class DesignBundle:
    """Training and test data in unit-hypercube coordinates, normalized on the test set."""

    problem: str
    replicate: int
    X: np.ndarray
    z: np.ndarray
    X_test: np.ndarray
    z_test: np.ndarray
    mean: float
    scale: float
    family_index: int | None = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def dataset(self):
        from .gp import Dataset

        return Dataset(self.X, self.z)


def training_design(n, d, seed, replicate):
    return maximin_lhs(n, d, np.random.default_rng([seed, replicate]))


def make_bundle(p, X_unit, X_test_unit, replicate):
    f_test = eval_problem(p, p.to_box(X_test_unit))
    mean = float(np.mean(f_test))
    scale = float(np.std(f_test))
    if scale == 0.0:
        raise ValueError(f"{p.name} is constant on the test set")
    f_train = eval_problem(p, p.to_box(X_unit))
    return DesignBundle(
        problem=p.name,
        replicate=replicate,
        X=X_unit,
        z=(f_train - mean) / scale,
        X_test=X_test_unit,
        z_test=(f_test - mean) / scale,
        mean=mean,
        scale=scale,
        family_index=p.family_index,
    )


def make_designs(p, n, N, M, seed):
    """M seeded maximin LHS training designs and one shared Sobol' test set."""
    if n < p.d + 2:
        raise ValueError("need n >= d + 2")
    if N < n:
        raise ValueError("need N >= n")
    X_test = sobol_points(N, p.d)
    return [make_bundle(p, training_design(n, p.d, seed, r), X_test, r) for r in range(M)]


def make_collection_designs(problems, n, N, seed):
    """One bundle per member of a collection, all on the same training design."""
    d = problems[0].d
    X = training_design(n, d, seed, 0)
    X_test = sobol_points(N, d)
    return [make_bundle(p, X, X_test, r) for r, p in enumerate(problems)]


# tabulated datasets


class TableParseError(ValueError):
    pass


def load_table(path, delimiter=None):
    """Read a delimited file: a header row, then d input columns and one output column.

    Returns ``(X, y, header)``. The delimiter is sniffed among ",;\\t " when not given.
    """
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise TableParseError(f"{path}: empty file")
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(lines[0], delimiters=",;\t ").delimiter
        except csv.Error:
            delimiter = ","
    rows = list(csv.reader(lines, delimiter=delimiter, skipinitialspace=True))
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise TableParseError(f"{path}: line 1: need at least one input and one output column")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise TableParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            raise TableParseError(f"{path}: line {lineno}: non-numeric field") from None
    if not values:
        raise TableParseError(f"{path}: no data rows")
    arr = np.array(values)
    if not np.all(np.isfinite(arr)):
        raise TableParseError(f"{path}: non-finite values")
    return arr[:, :-1], arr[:, -1], header
