"""Incremental growth of bordered systems with integrated-variance caches.

Adding a site to a coalition is a rank-one bordered extension: with
w = [k(X_A, x_i) | f(x_i)], u = H w and pivot

    delta = (sigma^2 + nugget) - w^T u,

the grown inverse is H + u u^T / delta in the old block, -u / delta in
the new row/column, 1 / delta on the new diagonal.  The new data row is
stored at position m (after existing data, before the border), keeping
storage aligned with ``active`` order.

The same pivot updates every cached quadrature variance in O(1) each:

    s_new(x) = s_old(x) - (V(x) . u - k(x, x_i))^2 / delta,

where V is the cached cross matrix.  The decrement is a ratio of a
square to a positive pivot, so cached integrated variance is
non-increasing along any insertion order by construction, not merely up
to roundoff.

A reset policy bounds drift: when the 1-norm condition estimate, the
chained-update count, or (if configured) the absolute IV step exceeds
its bound, the state is rebuilt by direct assembly and the caches are
refreshed from the fresh factorization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, InputError, NumericalBreakdownError
from .gp import (
    PIVOT_FLOOR,
    BorderedSystem,
    assemble,
    condition_1norm,
    residual_variances,
)
from .kernels import (
    KernelSpec,
    TrendBasis,
    as_point_matrix,
    basis_matrix,
    kernel_matrix,
)

log = logging.getLogger("gpdv.incremental")

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class QuadratureSet:
    """Sites and convex weights for discretized integrated variance."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = as_point_matrix(self.points)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] == 0:
            raise InputError("quadrature needs at least one site")
        if w.shape[0] != pts.shape[0]:
            raise InputError(
                f"{w.shape[0]} weights for {pts.shape[0]} quadrature sites"
            )
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InputError("quadrature weights must be finite and non-negative")
        if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise InputError(
                f"quadrature weights sum to {float(w.sum()):.17g}, expected 1"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.shape[0]


def grid_quadrature(lo: float, hi: float, count: int) -> QuadratureSet:
    """Uniform 1-D grid with equal weights over [lo, hi]."""
    if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
        raise InputError(f"bad quadrature interval [{lo}, {hi}]")
    if count < 2:
        raise InputError(f"grid quadrature needs at least 2 sites, got {count}")
    pts = np.linspace(lo, hi, count)[:, None]
    w = np.full(count, 1.0 / count)
    w /= w.sum()
    return QuadratureSet(pts, w)


def points_quadrature(points) -> QuadratureSet:
    """Uniform weights on an explicit site set (held-out inputs, say)."""
    pts = as_point_matrix(points)
    n = pts.shape[0]
    if n == 0:
        raise InputError("quadrature needs at least one site")
    w = np.full(n, 1.0 / n)
    w /= w.sum()
    return QuadratureSet(pts, w)


@dataclass(frozen=True)
class ResetPolicy:
    """Bounds that trigger a direct rebuild of a chained state.

    ``max_abs_iv_step`` defaults to infinity (disabled); the condition
    and chain-length triggers are always armed.
    """

    max_condition: float = 1e10
    max_chained_updates: int = 64
    max_abs_iv_step: float = math.inf

    def __post_init__(self):
        if not self.max_condition > 0:
            raise InputError(f"max_condition must be positive, got {self.max_condition}")
        if self.max_chained_updates < 0:
            raise InputError(
                f"max_chained_updates must be non-negative, got {self.max_chained_updates}"
            )
        if not self.max_abs_iv_step > 0:
            raise InputError(
                f"max_abs_iv_step must be positive, got {self.max_abs_iv_step}"
            )


@dataclass(frozen=True, eq=False)
class _ProblemMemo:
    """Kernel and basis values precomputed once per (sites, quadrature).

    site_cov : (n, n) nugget-free covariance between candidate sites.
    quad_cov : (M, n) covariance from quadrature sites to candidates.
    site_basis : (n, p) trend basis at candidate sites.
    quad_basis : (M, p) trend basis at quadrature sites.
    """

    site_cov: np.ndarray
    quad_cov: np.ndarray
    site_basis: np.ndarray
    quad_basis: np.ndarray


def _build_memo(kernel, trend, pts, quadrature) -> _ProblemMemo:
    return _ProblemMemo(
        site_cov=kernel_matrix(kernel, pts, pts),
        quad_cov=kernel_matrix(kernel, quadrature.points, pts),
        site_basis=basis_matrix(trend, pts),
        quad_basis=basis_matrix(trend, quadrature.points),
    )


@dataclass(frozen=True, eq=False)
class IncrementalState:
    """A system plus quadrature caches, ready for O(k^2) growth steps.

    cross_cache : (M, size) saturated cross vectors at quadrature sites.
    var_cache : (M,) residual variances at quadrature sites.
    iv_cache : weights . var_cache.
    """

    system: BorderedSystem
    quadrature: QuadratureSet
    policy: ResetPolicy
    cross_cache: np.ndarray
    var_cache: np.ndarray
    iv_cache: float
    condition_estimate: float
    updates_since_reset: int
    memo: _ProblemMemo


def _fresh_state(
    system: BorderedSystem,
    quadrature: QuadratureSet,
    policy: ResetPolicy,
    memo: _ProblemMemo,
) -> IncrementalState:
    act = list(system.active)
    if system.border_dim > 0:
        V = np.hstack([memo.quad_cov[:, act], memo.quad_basis])
    else:
        V = memo.quad_cov[:, act].copy()
    s = residual_variances(system, quadrature.points, cross=V)
    iv = float(quadrature.weights @ s)
    return IncrementalState(
        system=system,
        quadrature=quadrature,
        policy=policy,
        cross_cache=V,
        var_cache=s,
        iv_cache=iv,
        condition_estimate=condition_1norm(system),
        updates_since_reset=0,
        memo=memo,
    )


def initial_state(
    kernel: KernelSpec,
    trend: TrendBasis,
    points,
    quadrature: QuadratureSet,
    policy: ResetPolicy | None = None,
    indices=(),
) -> IncrementalState:
    """Fresh state on a coalition (empty by default) via direct assembly."""
    pts = as_point_matrix(points)
    if pts.shape[1] != quadrature.points.shape[1]:
        raise InputError(
            f"quadrature dimension {quadrature.points.shape[1]} does not "
            f"match sites ({pts.shape[1]})"
        )
    if policy is None:
        policy = ResetPolicy()
    system = assemble_with_fallback(kernel, trend, pts, tuple(indices))
    memo = _build_memo(kernel, trend, pts, quadrature)
    return _fresh_state(system, quadrature, policy, memo)


def assemble_with_fallback(kernel, trend, pts, idx) -> BorderedSystem:
    # Rank-deficient trend on this coalition: stay in simple form rather
    # than abort the sweep; the bordered form is retried as it grows.
    try:
        return assemble(kernel, trend, pts, idx)
    except AssemblyError:
        simple = TrendBasis("simple", trend.input_dim)
        sys_simple = assemble(kernel, simple, pts, idx)
        return BorderedSystem(
            kernel, trend, pts, sys_simple.active,
            sys_simple.matrix, sys_simple.inverse, 0,
        )


def rebuild(state: IncrementalState, indices=None) -> IncrementalState:
    """Direct reassembly of the (possibly re-specified) coalition."""
    idx = state.system.active if indices is None else tuple(indices)
    system = assemble_with_fallback(
        state.system.kernel, state.system.trend, state.system.points, idx
    )
    return _fresh_state(system, state.quadrature, state.policy, state.memo)


def condition_estimate(state: IncrementalState) -> float:
    """The maintained 1-norm condition estimate of the current system."""
    return state.condition_estimate


def integrated_variance(state: IncrementalState) -> float:
    """Quadrature-weighted mean of the cached residual variances."""
    return state.iv_cache


def integrated_variance_of(system: BorderedSystem, quadrature: QuadratureSet) -> float:
    """Direct (cache-free) integrated variance of an assembled system."""
    s = residual_variances(system, quadrature.points)
    return float(quadrature.weights @ s)


def _grow(state: IncrementalState, i: int) -> IncrementalState | None:
    """One Schur growth step; None signals an unusable pivot."""
    sys = state.system
    kernel = sys.kernel
    m, border = sys.m, sys.border_dim
    memo = state.memo
    act = list(sys.active)
    k_new = memo.site_cov[act, i]
    if border > 0:
        w = np.concatenate([k_new, memo.site_basis[i]])
    else:
        w = k_new
    H = sys.inverse
    u = H @ w
    total = kernel.variance + kernel.nugget
    delta = total - float(w @ u)
    if delta <= PIVOT_FLOOR:
        return None

    # new data row lands at position m; border rows shift to trail it
    nn = sys.size + 1
    core = np.outer(u, u)
    core /= delta
    core += H
    ug = u / delta
    Hn = np.empty((nn, nn))
    Hn[:m, :m] = core[:m, :m]
    Hn[:m, m] = -ug[:m]
    Hn[m, :m] = -ug[:m]
    Hn[m, m] = 1.0 / delta
    Mn = np.empty((nn, nn))
    Mn[:m, :m] = sys.matrix[:m, :m]
    Mn[:m, m] = k_new
    Mn[m, :m] = k_new
    Mn[m, m] = total
    if border:
        Hn[: m, m + 1 :] = core[:m, m:]
        Hn[m + 1 :, :m] = core[m:, :m]
        Hn[m + 1 :, m + 1 :] = core[m:, m:]
        Hn[m + 1 :, m] = -ug[m:]
        Hn[m, m + 1 :] = -ug[m:]
        Mn[: m, m + 1 :] = sys.matrix[:m, m:]
        Mn[m + 1 :, :m] = sys.matrix[m:, :m]
        Mn[m + 1 :, m + 1 :] = sys.matrix[m:, m:]
        Mn[m + 1 :, m] = w[m:]
        Mn[m, m + 1 :] = w[m:]

    c = memo.quad_cov[:, i]
    gain = state.cross_cache @ u
    gain -= c
    s_new = state.var_cache - gain * gain / delta
    np.maximum(s_new, 0.0, out=s_new)
    Vn = np.empty((state.quadrature.size, nn))
    Vn[:, :m] = state.cross_cache[:, :m]
    Vn[:, m] = c
    if border:
        Vn[:, m + 1 :] = state.cross_cache[:, m:]

    system = BorderedSystem(
        kernel, sys.trend, sys.points, sys.active + (i,), Mn, Hn, border
    )
    return IncrementalState(
        system=system,
        quadrature=state.quadrature,
        policy=state.policy,
        cross_cache=Vn,
        var_cache=s_new,
        iv_cache=float(state.quadrature.weights @ s_new),
        condition_estimate=condition_1norm(system),
        updates_since_reset=state.updates_since_reset + 1,
        memo=memo,
    )


def add_point(state: IncrementalState, i: int) -> IncrementalState:
    """Grow the coalition by training index i, honoring the reset policy.

    Degenerate pivots trigger one retry from a freshly rebuilt parent,
    then a direct assembly of the grown coalition; only when that also
    fails does the breakdown propagate.  Crossing m + 1 >= p under an
    active trend switches the representation from simple to bordered,
    which is a forced direct rebuild (the border appears
    discontinuously, not by rank-one steps).
    """
    sys = state.system
    i = int(i)
    if not 0 <= i < sys.points.shape[0]:
        raise InputError(f"index {i} outside the coordinate table")
    if i in sys.active:
        raise InputError(f"index {i} is already in the coalition")

    p = sys.trend.p
    if p > 0 and sys.border_dim == 0 and sys.m + 1 >= p:
        return rebuild(state, sys.active + (i,))

    grown = _grow(state, i)
    if grown is None:
        rebuilt = rebuild(state)
        grown = _grow(rebuilt, i)
    if grown is None:
        # the pivot formula cancels catastrophically near kappa ~ 1/delta,
        # where a direct factorization of the grown system is still fine
        try:
            grown = rebuild(state, sys.active + (i,))
        except NumericalBreakdownError as exc:
            raise NumericalBreakdownError(
                f"growth pivot for index {i} stayed below {PIVOT_FLOOR:g} "
                f"and direct assembly failed too (coalition size {sys.m}): "
                f"{exc}"
            ) from None

    if log.isEnabledFor(logging.DEBUG):
        log.debug(
            "add %d: size=%d cond=%.3e iv=%.6e",
            i, grown.system.m, grown.condition_estimate, grown.iv_cache,
        )
    pol = state.policy
    step = abs(grown.iv_cache - state.iv_cache)
    if (
        grown.condition_estimate > pol.max_condition
        or grown.updates_since_reset > pol.max_chained_updates
        or step > pol.max_abs_iv_step
    ):
        log.debug(
            "reset after adding %d (cond=%.3e updates=%d step=%.3e)",
            i, grown.condition_estimate, grown.updates_since_reset, step,
        )
        return rebuild(grown)
    return grown


def iv_step(state: IncrementalState, i: int) -> tuple[IncrementalState, float]:
    """``add_point`` plus the updated integrated variance, in one call."""
    grown = add_point(state, i)
    return grown, grown.iv_cache
