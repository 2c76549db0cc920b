"""Per-datum valuation: leave-one-out and Shapley over coalition utilities.

Utilities are lower-is-better model-quality scores of a training
coalition: integrated posterior variance over a quadrature, or test-set
MSE.  Values follow the reduction-positive convention: a datum whose
presence lowers the score gets a positive value.

The Monte-Carlo Shapley estimator walks random permutations, attributing
to each datum the utility drop it causes when appended to the prefix.
The integrated-variance walker rides the incremental update chain, so a
full permutation costs O(n * k^2) instead of n factorizations.  Each
permutation gets its own counter-based RNG stream derived from
(seed, permutation index), so results are reproducible and independent
of thread count; accumulation is Welford in permutation order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import InputError, NumericalBreakdownError
from .gp import BorderedSystem, loo_residual_system, predict_means
from .incremental import (
    QuadratureSet,
    ResetPolicy,
    assemble_with_fallback,
    initial_state,
    integrated_variance_of,
    iv_step,
)
from .kernels import KernelSpec, TrendBasis, as_point_matrix

# A broken-down permutation is redrawn at most this many times.
MAX_REDRAWS = 5


def _coalition_system(kernel, trend, points, indices) -> BorderedSystem:
    return assemble_with_fallback(
        kernel, trend, points, tuple(int(i) for i in indices)
    )


class IntegratedVarianceUtility:
    """Coalition score: quadrature-discretized integrated Kriging variance."""

    kind = "integrated-variance"
    orientation = "lower-is-better"

    def __init__(
        self,
        kernel: KernelSpec,
        trend: TrendBasis,
        points,
        quadrature: QuadratureSet,
        policy: ResetPolicy | None = None,
    ):
        self.kernel = kernel
        self.trend = trend
        self.points = as_point_matrix(points)
        if self.points.shape[0] == 0:
            raise InputError("utility needs at least one candidate site")
        if self.points.shape[1] != quadrature.points.shape[1]:
            raise InputError(
                f"quadrature dimension {quadrature.points.shape[1]} does not "
                f"match sites ({self.points.shape[1]})"
            )
        self.quadrature = quadrature
        self.policy = policy if policy is not None else ResetPolicy()
        self._full_value: float | None = None
        self._empty_state = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def coalition_system(self, coalition) -> BorderedSystem:
        return _coalition_system(self.kernel, self.trend, self.points, coalition)

    def evaluate_system(self, system: BorderedSystem) -> float:
        return integrated_variance_of(system, self.quadrature)

    def evaluate(self, coalition) -> float:
        return self.evaluate_system(self.coalition_system(coalition))

    def full_value(self) -> float:
        if self._full_value is None:
            self._full_value = self.evaluate(range(self.n))
        return self._full_value

    def walker(self) -> "_IncrementalWalker":
        # states are immutable, so one shared empty state seeds every walk
        if self._empty_state is None:
            self._empty_state = initial_state(
                self.kernel, self.trend, self.points, self.quadrature, self.policy
            )
        return _IncrementalWalker(self._empty_state)


class TestMSEUtility:
    """Coalition score: mean squared prediction error on held-out pairs.

    The empty coalition predicts identically zero (zero-coefficient
    trend), scoring mean(y_test^2).
    """

    kind = "test-mse"
    orientation = "lower-is-better"

    def __init__(
        self,
        kernel: KernelSpec,
        trend: TrendBasis,
        points,
        targets,
        test_points,
        test_targets,
    ):
        self.kernel = kernel
        self.trend = trend
        self.points = as_point_matrix(points)
        self.targets = np.asarray(targets, dtype=float).reshape(-1)
        self.test_points = as_point_matrix(test_points)
        self.test_targets = np.asarray(test_targets, dtype=float).reshape(-1)
        if self.points.shape[0] == 0:
            raise InputError("utility needs at least one candidate site")
        if self.targets.shape[0] != self.points.shape[0]:
            raise InputError(
                f"{self.targets.shape[0]} targets for {self.points.shape[0]} sites"
            )
        if self.test_points.shape[0] == 0:
            raise InputError("test-mse utility needs a non-empty test set")
        if self.test_targets.shape[0] != self.test_points.shape[0]:
            raise InputError(
                f"{self.test_targets.shape[0]} test targets for "
                f"{self.test_points.shape[0]} test sites"
            )
        if self.test_points.shape[1] != self.points.shape[1]:
            raise InputError(
                f"test-site dimension {self.test_points.shape[1]} does not "
                f"match training sites ({self.points.shape[1]})"
            )
        self._full_value: float | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def coalition_system(self, coalition) -> BorderedSystem:
        return _coalition_system(self.kernel, self.trend, self.points, coalition)

    def evaluate_system(self, system: BorderedSystem) -> float:
        z = self.targets[list(system.active)]
        err = predict_means(system, z, self.test_points) - self.test_targets
        return float(err @ err) / err.shape[0]

    def evaluate(self, coalition) -> float:
        return self.evaluate_system(self.coalition_system(coalition))

    def full_value(self) -> float:
        if self._full_value is None:
            self._full_value = self.evaluate(range(self.n))
        return self._full_value

    def walker(self) -> "_ReassemblyWalker":
        return _ReassemblyWalker(self)


class _IncrementalWalker:
    """Prefix walker over the incremental update chain."""

    def __init__(self, state):
        self.state = state

    @property
    def value(self) -> float:
        return self.state.iv_cache

    def add(self, i: int) -> float:
        self.state, val = iv_step(self.state, i)
        return val


class _ReassemblyWalker:
    """Prefix walker that reassembles and rescores from scratch each step."""

    def __init__(self, utility):
        self.utility = utility
        self.coalition: list[int] = []
        self.value = utility.evaluate(())

    def add(self, i: int) -> float:
        self.coalition.append(int(i))
        self.value = self.utility.evaluate(self.coalition)
        return self.value


@dataclass(frozen=True, eq=False)
class ValuationReport:
    """Per-datum values with uncertainty, provenance, and run settings."""

    method: str
    values: np.ndarray
    std_errors: np.ndarray
    sample_counts: np.ndarray
    total_utility_gap: float
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        se = np.asarray(self.std_errors, dtype=float).reshape(-1)
        ct = np.asarray(self.sample_counts, dtype=int).reshape(-1)
        if not (v.shape == se.shape and v.shape == ct.shape):
            raise InputError("report columns have mismatched lengths")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "std_errors", se)
        object.__setattr__(self, "sample_counts", ct)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def write_csv(self, path) -> None:
        lines = ["index,value,std_error,samples,method"]
        for i in range(self.n):
            # plain-float repr: shortest digits that round-trip exactly
            lines.append(
                f"{i},{float(self.values[i])!r},{float(self.std_errors[i])!r},"
                f"{int(self.sample_counts[i])},{self.method}"
            )
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    def config_payload(self) -> dict:
        return {
            "method": self.method,
            "total_utility_gap": self.total_utility_gap,
            "config": self.config,
            "diagnostics": self.diagnostics,
        }

    def write_config(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(self.config_payload(), indent=2, sort_keys=True) + "\n")


def load_valuations(path) -> ValuationReport:
    """Read back a valuations CSV written by ``ValuationReport.write_csv``."""
    with open(path, encoding="utf-8") as fh:
        rows = [ln.strip() for ln in fh if ln.strip()]
    if not rows or rows[0] != "index,value,std_error,samples,method":
        raise InputError(f"{path}: not a valuations CSV (bad header)")
    vals, errs, cts, methods = [], [], [], []
    for ln in rows[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise InputError(f"{path}: malformed row {ln!r}")
        vals.append(float(parts[1]))
        errs.append(float(parts[2]))
        cts.append(int(parts[3]))
        methods.append(parts[4])
    if not vals:
        raise InputError(f"{path}: no data rows")
    method = methods[0] if len(set(methods)) == 1 else "mixed"
    return ValuationReport(method, np.array(vals), np.array(errs), np.array(cts), math.nan)


def loo_values(utility, backend: str = "schur") -> ValuationReport:
    """Leave-one-out values: phi(D without i) - phi(D) for every datum.

    ``schur`` removes each datum by an O(k^2) inverse downdate of the
    one full factorization; ``naive`` reassembles every sub-coalition.
    A datum whose downdate pivot breaks down falls back to the naive
    path and is listed in the diagnostics.
    """
    if backend not in ("schur", "naive"):
        raise InputError(f"unknown LOO backend {backend!r}")
    n = utility.n
    p = utility.trend.p
    if n < p + 1:
        raise InputError(
            f"leave-one-out needs at least {p + 1} sites under this trend, got {n}"
        )
    full_sys = utility.coalition_system(range(n))
    phi_full = utility.evaluate_system(full_sys)
    phi_empty = utility.evaluate(())
    values = np.empty(n)
    fallback: list[int] = []
    for i in range(n):
        phi = None
        if backend == "schur":
            try:
                sub = loo_residual_system(full_sys, i)
                phi = utility.evaluate_system(sub)
            except NumericalBreakdownError:
                fallback.append(i)
        if phi is None:
            phi = utility.evaluate([j for j in range(n) if j != i])
        values[i] = phi - phi_full
    method = "loo-schur" if backend == "schur" else "loo"
    return ValuationReport(
        method=method,
        values=values,
        std_errors=np.zeros(n),
        sample_counts=np.ones(n, dtype=int),
        total_utility_gap=phi_empty - phi_full,
        config={"backend": backend, "utility": utility.kind},
        diagnostics={"naive_fallback": fallback},
    )


def shapley_exact(utility, n_limit: int = 12) -> ValuationReport:
    """Exact Shapley values by coalition enumeration (2^n scorings).

    Refuses for n beyond ``n_limit``; this is a ground-truth tool, not a
    production path.
    """
    n = utility.n
    if n > n_limit:
        raise InputError(
            f"exact Shapley scores 2^n coalitions; n={n} exceeds the limit "
            f"{n_limit} (raise n_limit only if you mean it)"
        )
    U = np.empty(1 << n)
    for mask in range(1 << n):
        U[mask] = utility.evaluate([i for i in range(n) if mask >> i & 1])
    fact = [math.factorial(k) for k in range(n + 1)]
    wt = [fact[s] * fact[n - 1 - s] / fact[n] for s in range(n)]
    values = np.zeros(n)
    for mask in range(1 << n):
        s = mask.bit_count()
        if s == n:
            continue
        w = wt[s]
        for i in range(n):
            if not mask >> i & 1:
                values[i] += w * (U[mask] - U[mask | (1 << i)])
    return ValuationReport(
        method="shapley-exact",
        values=values,
        std_errors=np.zeros(n),
        sample_counts=np.full(n, 1 << (n - 1), dtype=int),
        total_utility_gap=float(U[0] - U[(1 << n) - 1]),
        config={"n_limit": n_limit, "utility": utility.kind},
        diagnostics={},
    )


def _permutation_marginals(utility, perm, full_value, tolerance, burn_in):
    walker = utility.walker()
    n = perm.shape[0]
    out = np.full(n, np.nan)
    prev = walker.value
    truncated = False
    for pos, j in enumerate(perm, start=1):
        j = int(j)
        if truncated:
            marg = 0.0
        else:
            cur = walker.add(j)
            marg = prev - cur
            prev = cur
            if abs(cur - full_value) < tolerance:
                truncated = True
        if pos > burn_in:
            out[j] = marg
    return out


def shapley_mc(
    utility,
    budget: int = 500,
    tolerance: float = 0.0,
    burn_in: int = 0,
    seed: int = 0,
    threads: int = 1,
) -> ValuationReport:
    """Truncated Monte-Carlo Shapley over random permutations.

    budget : number of permutations.
    tolerance : once the prefix utility is within this of the full-set
        utility, the rest of the permutation is attributed zero marginal
        without further model updates.  0 never truncates.
    burn_in : leading positions per permutation that update the model
        but record no marginal.
    seed, threads : stream seed and worker count; outputs are identical
        for any thread count.
    """
    n = utility.n
    if budget < 1:
        raise InputError(f"budget must be at least 1, got {budget}")
    if not (np.isfinite(tolerance) and tolerance >= 0):
        raise InputError(f"tolerance must be finite and non-negative, got {tolerance}")
    if burn_in < 0:
        raise InputError(f"burn_in must be non-negative, got {burn_in}")
    if burn_in >= n:
        raise InputError(f"burn_in {burn_in} swallows every position (n={n})")
    if threads < 1:
        raise InputError(f"threads must be at least 1, got {threads}")

    full_value = utility.full_value()
    phi_empty = utility.evaluate(())

    def one(b: int):
        for attempt in range(MAX_REDRAWS):
            rng = np.random.default_rng([seed, b, attempt])
            perm = rng.permutation(n)
            try:
                marg = _permutation_marginals(
                    utility, perm, full_value, tolerance, burn_in
                )
                return marg, attempt
            except NumericalBreakdownError:
                continue
        raise NumericalBreakdownError(
            f"permutation {b}: all {MAX_REDRAWS} redraws broke down"
        )

    if threads == 1:
        outputs = [one(b) for b in range(budget)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outputs = list(ex.map(one, range(budget)))

    count = np.zeros(n, dtype=int)
    mean = np.zeros(n)
    m2 = np.zeros(n)
    redraws = 0
    for marg, attempt in outputs:
        redraws += attempt
        idx = np.flatnonzero(~np.isnan(marg))
        count[idx] += 1
        d = marg[idx] - mean[idx]
        mean[idx] += d / count[idx]
        m2[idx] += d * (marg[idx] - mean[idx])

    se = np.zeros(n)
    steady = count > 1
    se[steady] = np.sqrt(m2[steady] / (count[steady] * (count[steady] - 1)))
    return ValuationReport(
        method="shapley-mc",
        values=mean,
        std_errors=se,
        sample_counts=count,
        total_utility_gap=phi_empty - full_value,
        config={
            "budget": budget,
            "tolerance": tolerance,
            "burn_in": burn_in,
            "seed": seed,
            "threads": threads,
            "utility": utility.kind,
        },
        diagnostics={"redraws": redraws, "min_samples": int(count.min())},
    )


def spearman(a, b) -> float:
    """Spearman rank correlation; identical rankings return exactly 1.0."""
    x = np.asarray(a, dtype=float).reshape(-1)
    y = np.asarray(b, dtype=float).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise InputError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise InputError("rank correlation needs at least two entries")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise InputError("rank correlation is undefined for a constant vector")
    rx = rankdata(x)
    ry = rankdata(y)
    if np.array_equal(rx, ry):
        return 1.0
    if np.array_equal(rx, x.shape[0] + 1.0 - ry):
        return -1.0
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    return float((dx @ dy) / math.sqrt((dx @ dx) * (dy @ dy)))


def normalize(report_or_values) -> np.ndarray:
    """Values rescaled to sum to 1; refuses when the sum is zero."""
    if isinstance(report_or_values, ValuationReport):
        v = report_or_values.values
    else:
        v = np.asarray(report_or_values, dtype=float).reshape(-1)
    total = float(v.sum())
    if total == 0.0:
        raise InputError("values sum to zero; the normalized shares are undefined")
    return v / total
