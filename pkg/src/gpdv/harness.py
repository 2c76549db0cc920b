"""Benchmark harness: datasets, splits, and the data-removal experiment.

The removal benchmark ranks training data by a valuation method, retains
the top fraction at each grid point, refits from scratch, and scores the
retained model on held-out MSE and on integrated variance.  A random
ranking averaged over seeds is the baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AssemblyError, IngestError, InputError
from .gp import assemble, predict_means, residual_variances
from .incremental import QuadratureSet, grid_quadrature, points_quadrature
from .kernels import KernelSpec, TrendBasis, as_point_matrix
from .valuation import (
    IntegratedVarianceUtility,
    TestMSEUtility,
    ValuationReport,
    loo_values,
    shapley_exact,
    shapley_mc,
)

VALUATION_METHODS = ("loo", "loo-schur", "shapley-exact", "shapley-mc")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features, targets, and the standardization stats that produced them.

    ``feature_means``/``feature_stds`` are identity (0, 1) when the
    features are raw, as for synthetic problems.  ``groups`` optionally
    names index subsets (cluster, isolated site, ...).
    """

    features: np.ndarray
    targets: np.ndarray
    columns: tuple[str, ...]
    target_name: str
    provenance: str
    feature_means: np.ndarray
    feature_stds: np.ndarray
    groups: dict | None = None

    def __post_init__(self):
        X = as_point_matrix(self.features)
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise InputError(f"{y.shape[0]} targets for {X.shape[0]} rows")
        if X.shape[0] < 2:
            raise InputError(f"dataset needs at least 2 rows, got {X.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise InputError("targets contain non-finite values")
        if len(self.columns) != X.shape[1]:
            raise InputError(
                f"{len(self.columns)} column names for {X.shape[1]} feature columns"
            )
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(
            self, "feature_means", np.asarray(self.feature_means, dtype=float)
        )
        object.__setattr__(
            self, "feature_stds", np.asarray(self.feature_stds, dtype=float)
        )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def gen_synthetic_sinus(
    n: int = 20,
    domain: tuple[float, float] = (0.0, 10.0),
    noise_sd: float = 0.1,
    seed: int = 0,
    cluster_size: int = 5,
    cluster_spread: float = 0.02,
    isolation: float = 0.3,
    isolated: bool = True,
) -> Dataset:
    """Noisy sine observations on a 1-D domain with optional planted structure.

    Layout: background sites, then a tight cluster of ``cluster_size``
    sites (pairwise within 2 * cluster_spread of the domain width), then
    one isolated site at least ``isolation`` * width from every other.
    ``cluster_size=0`` skips the cluster and ``isolated=False`` skips the
    isolated site, leaving plain uniform draws over the domain.
    Features stay raw (identity standardization); the lengthscale is in
    domain units.
    """
    lo, hi = float(domain[0]), float(domain[1])
    width = hi - lo
    if not (np.isfinite(lo) and np.isfinite(hi) and width > 0):
        raise InputError(f"bad domain {domain!r}")
    if cluster_size < 0:
        raise InputError(f"cluster_size must be non-negative, got {cluster_size}")
    if noise_sd < 0:
        raise InputError(f"noise_sd must be non-negative, got {noise_sd}")
    if not 0 < isolation < 0.9:
        raise InputError(f"isolation must be in (0, 0.9), got {isolation}")
    n_special = cluster_size + (1 if isolated else 0)
    if n < max(2, n_special + 1):
        raise InputError(
            f"n={n} is too small for {cluster_size} clustered sites plus an "
            f"isolated one"
        )
    rng = np.random.default_rng(seed)
    # everything except the isolated site lives left of this cap
    cap = hi - (isolation + 0.02) * width if isolated else hi
    n_bg = n - n_special
    bg = rng.uniform(lo, cap, size=n_bg)
    if cluster_size > 0:
        margin = cluster_spread * width
        center = rng.uniform(lo + margin, cap - margin)
        cluster = center + rng.uniform(-1.0, 1.0, size=cluster_size) * margin
    else:
        cluster = np.zeros(0)
    tail = [hi - 0.01 * width] if isolated else []
    x = np.concatenate([bg, cluster, tail])
    z = np.sin(x) + noise_sd * rng.standard_normal(n)
    groups = {
        "background": np.arange(n_bg),
        "cluster": np.arange(n_bg, n_bg + cluster_size),
        "isolated": np.array([n - 1]) if isolated else np.arange(0),
    }
    return Dataset(
        features=x[:, None],
        targets=z,
        columns=("x",),
        target_name="z",
        provenance="synthetic-sinus",
        feature_means=np.zeros(1),
        feature_stds=np.ones(1),
        groups=groups,
    )


def ingest_csv(path, target_column: str) -> Dataset:
    """Load a numeric CSV, standardize features, keep targets raw.

    Errors name the offending row (1-based, header is row 1) and column.
    Constant feature columns are refused (standardization undefined).
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise IngestError(
                f"{path}: target column {target_column!r} not in header {header}"
            )
        t_pos = header.index(target_column)
        feat_names = [h for k, h in enumerate(header) if k != t_pos]
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise IngestError(
                    f"{path}: row {lineno} has {len(raw)} fields, expected "
                    f"{len(header)}"
                )
            vals = []
            for k, cell in enumerate(raw):
                cell = cell.strip()
                if cell == "":
                    raise IngestError(
                        f"{path}: row {lineno} is missing a value in column "
                        f"{header[k]!r}"
                    )
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise IngestError(
                        f"{path}: row {lineno}, column {header[k]!r}: "
                        f"{cell!r} is not numeric"
                    ) from None
            rows.append(vals)
    if len(rows) < 2:
        raise IngestError(f"{path}: needs at least 2 data rows, got {len(rows)}")
    table = np.asarray(rows, dtype=float)
    y = table[:, t_pos]
    X = np.delete(table, t_pos, axis=1)
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    dead = np.flatnonzero(stds == 0)
    if dead.size:
        names = ", ".join(repr(feat_names[k]) for k in dead)
        raise IngestError(f"{path}: constant feature column(s) {names} cannot be standardized")
    Xs = (X - means) / stds
    return Dataset(
        features=Xs,
        targets=y,
        columns=tuple(feat_names),
        target_name=target_column,
        provenance=path.name,
        feature_means=means,
        feature_stds=stds,
    )


def split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded train/test split; refuses fractions that empty either side."""
    if not 0.0 < test_fraction < 1.0:
        raise InputError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = dataset.n
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n - n_test < 1:
        raise InputError(
            f"test_fraction {test_fraction} on n={n} leaves an empty side "
            f"({n - n_test} train, {n_test} test)"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])

    def take(idx, tag):
        return Dataset(
            features=dataset.features[idx],
            targets=dataset.targets[idx],
            columns=dataset.columns,
            target_name=dataset.target_name,
            provenance=f"{dataset.provenance}#{tag}",
            feature_means=dataset.feature_means,
            feature_stds=dataset.feature_stds,
        )

    return take(train_idx, "train"), take(test_idx, "test")


def default_quadrature(
    train: Dataset, test: Dataset | None, grid_points: int = 256
) -> QuadratureSet:
    """Uniform 1-D grid over the observed range, else held-out inputs."""
    if train.dim == 1:
        allx = train.features[:, 0]
        if test is not None:
            allx = np.concatenate([allx, test.features[:, 0]])
        lo, hi = float(allx.min()), float(allx.max())
        if hi == lo:
            hi = lo + 1.0
        return grid_quadrature(lo, hi, grid_points)
    if test is None or test.n == 0:
        raise InputError(
            "multidimensional integrated variance needs held-out inputs as "
            "quadrature sites"
        )
    return points_quadrature(test.features)


@dataclass(frozen=True, eq=False)
class RemovalCurve:
    """One method's metric trace over a strictly decreasing retention grid."""

    method: str
    retention: np.ndarray
    metric: np.ndarray
    metric_std: np.ndarray
    seed_count: int
    metric_name: str = "test-mse"

    def __post_init__(self):
        r = np.asarray(self.retention, dtype=float).reshape(-1)
        m = np.asarray(self.metric, dtype=float).reshape(-1)
        s = np.asarray(self.metric_std, dtype=float).reshape(-1)
        if r.shape != m.shape or r.shape != s.shape:
            raise InputError("curve columns have mismatched lengths")
        if r.size == 0:
            raise InputError("empty retention grid")
        if r[0] != 1.0 or np.any(np.diff(r) >= 0) or np.any(r <= 0):
            raise InputError(
                "retention grid must start at 1.0 and strictly decrease within (0, 1]"
            )
        if self.seed_count < 1:
            raise InputError(f"seed_count must be positive, got {self.seed_count}")
        object.__setattr__(self, "retention", r)
        object.__setattr__(self, "metric", m)
        object.__setattr__(self, "metric_std", s)


def write_removal_curves(curves, path) -> None:
    """Write curves as CSV rows: method,retention,metric,metric_std,seed_count."""
    lines = ["method,retention,metric,metric_std,seed_count"]
    for c in curves:
        for k in range(c.retention.shape[0]):
            lines.append(
                f"{c.method},{float(c.retention[k])!r},{float(c.metric[k])!r},"
                f"{float(c.metric_std[k])!r},{c.seed_count}"
            )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_removal_curves(path) -> list[RemovalCurve]:
    """Read back a removal-curve CSV written by ``write_removal_curves``."""
    with open(path, encoding="utf-8") as fh:
        rows = [ln.strip() for ln in fh if ln.strip()]
    if not rows or rows[0] != "method,retention,metric,metric_std,seed_count":
        raise InputError(f"{path}: not a removal-curve CSV (bad header)")
    by_method: dict[str, list] = {}
    order = []
    for ln in rows[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise InputError(f"{path}: malformed row {ln!r}")
        name = parts[0]
        if name not in by_method:
            by_method[name] = []
            order.append(name)
        by_method[name].append(
            (float(parts[1]), float(parts[2]), float(parts[3]), int(parts[4]))
        )
    if not order:
        raise InputError(f"{path}: no data rows")
    curves = []
    for name in order:
        rs, ms, ss, cs = zip(*by_method[name])
        curves.append(
            RemovalCurve(name, np.array(rs), np.array(ms), np.array(ss), cs[0])
        )
    return curves


def _refit_metrics(kernel, trend, train, test, keep, quadrature):
    """Fresh direct refit on retained indices; (mse, iv), NaN if infeasible."""
    keep = sorted(int(i) for i in keep)
    if len(keep) < 1 or (trend.p > 0 and len(keep) < trend.p):
        return np.nan, np.nan
    try:
        system = assemble(kernel, trend, train.features, keep)
    except AssemblyError:
        return np.nan, np.nan
    z = train.targets[keep]
    err = predict_means(system, z, test.features) - test.targets
    mse = float(err @ err) / err.shape[0]
    s = residual_variances(system, quadrature.points)
    iv = float(quadrature.weights @ s)
    return mse, iv


def _rank_descending(values: np.ndarray) -> np.ndarray:
    # stable sort so ties break by index, deterministically
    return np.argsort(-values, kind="stable")


def compute_valuation(
    method: str,
    kernel: KernelSpec,
    trend: TrendBasis,
    train: Dataset,
    test: Dataset | None,
    quadrature: QuadratureSet,
    utility_kind: str = "integrated-variance",
    budget: int = 500,
    tolerance: float = 0.0,
    burn_in: int = 0,
    seed: int = 0,
    threads: int = 1,
    policy=None,
) -> ValuationReport:
    """Run one valuation method against the configured utility."""
    if method not in VALUATION_METHODS:
        raise InputError(
            f"unknown valuation method {method!r}; choose from {VALUATION_METHODS}"
        )
    if utility_kind == "integrated-variance":
        utility = IntegratedVarianceUtility(
            kernel, trend, train.features, quadrature, policy=policy
        )
    elif utility_kind == "test-mse":
        if test is None:
            raise InputError("the test-mse utility needs a held-out test set")
        utility = TestMSEUtility(
            kernel, trend, train.features, train.targets,
            test.features, test.targets,
        )
    else:
        raise InputError(
            f"unknown utility {utility_kind!r}; choose integrated-variance or test-mse"
        )
    if method == "loo":
        return loo_values(utility, backend="naive")
    if method == "loo-schur":
        return loo_values(utility, backend="schur")
    if method == "shapley-exact":
        return shapley_exact(utility)
    return shapley_mc(
        utility,
        budget=budget,
        tolerance=tolerance,
        burn_in=burn_in,
        seed=seed,
        threads=threads,
    )


def removal_benchmark(
    dataset: Dataset,
    methods,
    retention_grid,
    baseline_seeds,
    kernel: KernelSpec,
    trend: TrendBasis,
    *,
    utility_kind: str = "integrated-variance",
    test_fraction: float = 0.2,
    split_seed: int = 0,
    quadrature: QuadratureSet | None = None,
    grid_points: int = 256,
    budget: int = 500,
    tolerance: float = 0.0,
    burn_in: int = 0,
    seed: int = 0,
    threads: int = 1,
    policy=None,
) -> tuple[list[RemovalCurve], list[RemovalCurve], dict]:
    """The data-removal experiment.

    Returns (mse_curves, iv_curves, reports) where reports maps method
    name to its ValuationReport.  A ``random`` curve averaging the
    baseline seeds is appended when ``baseline_seeds`` is non-empty.
    """
    grid = np.asarray(list(retention_grid), dtype=float).reshape(-1)
    if grid.size == 0:
        raise InputError("empty retention grid")
    if grid[0] != 1.0 or np.any(np.diff(grid) >= 0) or np.any(grid <= 0):
        raise InputError(
            "retention grid must start at 1.0 and strictly decrease within (0, 1]"
        )
    methods = list(methods)
    for mth in methods:
        if mth not in VALUATION_METHODS:
            raise InputError(
                f"unknown valuation method {mth!r}; choose from {VALUATION_METHODS}"
            )
    train, test = split(dataset, test_fraction, seed=split_seed)
    if quadrature is None:
        quadrature = default_quadrature(train, test, grid_points=grid_points)

    n_train = train.n
    counts = [max(1, int(round(f * n_train))) for f in grid]

    def curve_for(order):
        mses, ivs = [], []
        for k in counts:
            mse, iv = _refit_metrics(
                kernel, trend, train, test, order[:k], quadrature
            )
            mses.append(mse)
            ivs.append(iv)
        return np.array(mses), np.array(ivs)

    mse_curves, iv_curves, reports = [], [], {}
    for mth in methods:
        report = compute_valuation(
            mth, kernel, trend, train, test, quadrature,
            utility_kind=utility_kind, budget=budget, tolerance=tolerance,
            burn_in=burn_in, seed=seed, threads=threads, policy=policy,
        )
        reports[mth] = report
        order = _rank_descending(report.values)
        mses, ivs = curve_for(order)
        zeros = np.zeros_like(mses)
        mse_curves.append(RemovalCurve(mth, grid, mses, zeros, 1, "test-mse"))
        iv_curves.append(
            RemovalCurve(mth, grid, ivs, zeros, 1, "integrated-variance")
        )

    seeds = list(baseline_seeds)
    if seeds:
        mse_stack, iv_stack = [], []
        for s in seeds:
            rng = np.random.default_rng(int(s))
            order = rng.permutation(n_train)
            mses, ivs = curve_for(order)
            mse_stack.append(mses)
            iv_stack.append(ivs)
        mse_stack = np.vstack(mse_stack)
        iv_stack = np.vstack(iv_stack)
        mse_curves.append(
            RemovalCurve(
                "random", grid, mse_stack.mean(axis=0), mse_stack.std(axis=0),
                len(seeds), "test-mse",
            )
        )
        iv_curves.append(
            RemovalCurve(
                "random", grid, iv_stack.mean(axis=0), iv_stack.std(axis=0),
                len(seeds), "integrated-variance",
            )
        )
    return mse_curves, iv_curves, reports
