"""Bordered Kriging systems: assembly, prediction, and deletion downdates.

The saturated linear system for a coalition A of m training sites under
a p-dimensional trend couples the noisy gram K (m x m, SPD) with the
basis matrix F (m x p):

    Kt = [[K, F], [F^T, 0]]

Kt is symmetric indefinite, but its inverse has a closed blockwise form
through the SPD Cholesky of K and the p x p Schur complement F^T K^-1 F,
so no general indefinite factorization is needed.  The inverse is kept
explicitly because every valuation step reads quadratic forms in it and
rank-one update/downdate identities act on it directly.

Coalitions smaller than p cannot carry the border (F would be wider than
tall); they are assembled in simple-Kriging form (no border, zero-mean
prior), as is everything when the trend itself is empty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import AssemblyError, InputError, NumericalBreakdownError
from .kernels import (
    KernelSpec,
    TrendBasis,
    as_point,
    as_point_matrix,
    basis_matrix,
    kernel_matrix,
    gram,
)

# Deletion/addition pivots below this are treated as a numerical breakdown.
PIVOT_FLOOR = 1e-12

# Base clamp for negative computed variances; scaled by the condition
# estimate because a fresh factorization at condition kappa already
# carries absolute error of order eps * kappa.
VARIANCE_CLAMP = 1e-10


@dataclass(frozen=True, eq=False)
class BorderedSystem:
    """Immutable snapshot of an assembled coalition system.

    points : full coordinate table the ``active`` indices refer to.
    active : coalition as a tuple of row indices into ``points``.
    matrix : the saturated system Kt, data rows first, border rows last.
    inverse : explicit inverse of ``matrix`` (symmetric).
    border_dim : number of trailing border rows (0 in simple form).
    """

    kernel: KernelSpec
    trend: TrendBasis
    points: np.ndarray
    active: tuple[int, ...]
    matrix: np.ndarray
    inverse: np.ndarray
    border_dim: int

    @property
    def m(self) -> int:
        return len(self.active)

    @property
    def size(self) -> int:
        return self.m + self.border_dim


@dataclass(frozen=True, eq=False)
class Prediction:
    """Point prediction: mean, Kriging weights, trend multipliers, variance."""

    mean: float
    weights: np.ndarray
    trend_multipliers: np.ndarray
    residual_variance: float


def _check_indices(points: np.ndarray, indices) -> tuple[int, ...]:
    idx = tuple(int(i) for i in indices)
    n = points.shape[0]
    for i in idx:
        if not 0 <= i < n:
            raise InputError(f"index {i} outside the coordinate table (n={n})")
    if len(set(idx)) != len(idx):
        raise InputError("coalition indices contain duplicates")
    return idx


def empty_system(kernel: KernelSpec, trend: TrendBasis, points) -> BorderedSystem:
    """The empty-coalition system: 0 x 0 blocks, prior-only predictions."""
    pts = as_point_matrix(points)
    z = np.zeros((0, 0))
    return BorderedSystem(kernel, trend, pts, (), z, z.copy(), 0)


def assemble(
    kernel: KernelSpec,
    trend: TrendBasis,
    points,
    indices,
) -> BorderedSystem:
    """Direct assembly of the coalition system from scratch.

    Builds the bordered form when the coalition can support the trend
    (m >= p > 0), else the simple form.  Raises
    ``NumericalBreakdownError`` if the gram is not positive definite and
    ``AssemblyError`` if the trend basis is rank-deficient on the
    coalition.
    """
    pts = as_point_matrix(points)
    idx = _check_indices(pts, indices)
    m = len(idx)
    if m == 0:
        return empty_system(kernel, trend, pts)
    X = pts[list(idx)]
    p = trend.p
    use_border = p > 0 and m >= p
    K = gram(kernel, X)
    try:
        chol = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdownError(
            f"coalition gram of size {m} is not positive definite "
            f"(nugget={kernel.nugget:g}); coincident sites need a nugget"
        ) from exc
    Kinv = cho_solve(chol, np.eye(m))
    if not use_border:
        H = 0.5 * (Kinv + Kinv.T)
        return BorderedSystem(kernel, trend, pts, idx, K, H, 0)
    F = basis_matrix(trend, X)
    KinvF = cho_solve(chol, F)
    S0 = F.T @ KinvF
    try:
        s0chol = cho_factor(0.5 * (S0 + S0.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise AssemblyError(
            f"trend basis {trend.family!r} is rank-deficient on the "
            f"coalition of size {m}; the bordered form does not exist"
        ) from exc
    S0inv = cho_solve(s0chol, np.eye(p))
    TL = Kinv - KinvF @ S0inv @ KinvF.T
    TR = KinvF @ S0inv
    H = np.block([[TL, TR], [TR.T, -S0inv]])
    H = 0.5 * (H + H.T)
    Kt = np.block([[K, F], [F.T, np.zeros((p, p))]])
    return BorderedSystem(kernel, trend, pts, idx, Kt, H, p)


def condition_1norm(system: BorderedSystem) -> float:
    """1-norm condition estimate: ||Kt||_1 * ||Kt^-1||_1 (1.0 when empty)."""
    if system.size == 0:
        return 1.0
    a = float(np.abs(system.matrix).sum(axis=0).max())
    b = float(np.abs(system.inverse).sum(axis=0).max())
    return a * b


def variance_floor(system: BorderedSystem) -> float:
    """Largest tolerated negative computed variance before breakdown."""
    scale = max(1.0, system.kernel.variance)
    return VARIANCE_CLAMP * max(1.0, condition_1norm(system)) * scale


def cross_matrix(system: BorderedSystem, X) -> np.ndarray:
    """Saturated cross vectors [k(x, X_A) | f(x)] for each row of X."""
    Xm = as_point_matrix(X)
    if Xm.shape[1] != system.points.shape[1]:
        raise InputError(
            f"query dimension {Xm.shape[1]} does not match sites "
            f"({system.points.shape[1]})"
        )
    Ka = kernel_matrix(system.kernel, Xm, system.points[list(system.active)])
    if system.border_dim == 0:
        return Ka
    return np.hstack([Ka, basis_matrix(system.trend, Xm)])


def _finalize_variances(s: np.ndarray, floor: float) -> np.ndarray:
    worst = float(s.min()) if s.size else 0.0
    if worst < -floor:
        raise NumericalBreakdownError(
            f"computed residual variance {worst:.3e} is negative beyond "
            f"the conditioning floor {floor:.3e}"
        )
    return np.maximum(s, 0.0)


def residual_variances(
    system: BorderedSystem, X, cross: np.ndarray | None = None
) -> np.ndarray:
    """Kriging variances at the rows of X, clamped at zero.

    Negative values within the conditioning floor clamp to 0; anything
    lower raises ``NumericalBreakdownError``.
    """
    Xm = as_point_matrix(X)
    prior = system.kernel.variance
    if system.m == 0:
        return np.full(Xm.shape[0], prior)
    V = cross_matrix(system, Xm) if cross is None else cross
    quad = np.einsum("ij,ij->i", V, V @ system.inverse)
    return _finalize_variances(prior - quad, variance_floor(system))


def predict(system: BorderedSystem, z, x) -> Prediction:
    """BLUP at a single site from coalition observations z (|z| = m)."""
    zv = np.asarray(z, dtype=float).reshape(-1)
    if zv.shape[0] != system.m:
        raise InputError(
            f"got {zv.shape[0]} observations for a coalition of size {system.m}"
        )
    xv = as_point(x, dim=system.points.shape[1])
    prior = system.kernel.variance
    if system.m == 0:
        return Prediction(0.0, np.zeros(0), np.zeros(0), prior)
    v = cross_matrix(system, xv[None, :])[0]
    sol = system.inverse @ v
    lam = sol[: system.m]
    mean = float(lam @ zv)
    s = prior - float(v @ sol)
    s = float(_finalize_variances(np.array([s]), variance_floor(system))[0])
    return Prediction(mean, lam, sol[system.m :], s)


def predict_means(system: BorderedSystem, z, X) -> np.ndarray:
    """BLUP means at the rows of X; one solve for the whole batch."""
    zv = np.asarray(z, dtype=float).reshape(-1)
    if zv.shape[0] != system.m:
        raise InputError(
            f"got {zv.shape[0]} observations for a coalition of size {system.m}"
        )
    Xm = as_point_matrix(X)
    if system.m == 0:
        return np.zeros(Xm.shape[0])
    rhs = np.concatenate([zv, np.zeros(system.border_dim)])
    beta = system.inverse @ rhs
    return cross_matrix(system, Xm) @ beta


def loo_residual_system(system: BorderedSystem, i: int) -> BorderedSystem:
    """Remove training index i by the partitioned-inverse downdate.

    O(k^2): the sub-inverse is H_sub - h h^T / H_rr where h is column r
    of H without the pivot row.  Refuses when removal would leave fewer
    data rows than the border needs; raises a breakdown error when the
    pivot falls below ``PIVOT_FLOOR`` (the downdated system would be
    singular).
    """
    if i not in system.active:
        raise InputError(f"index {i} is not in the active coalition")
    if system.border_dim > 0 and system.m - 1 < system.trend.p:
        raise InputError(
            f"removing index {i} leaves {system.m - 1} sites, fewer than "
            f"the {system.trend.p} the bordered trend needs"
        )
    r = system.active.index(i)
    H = system.inverse
    piv = float(H[r, r])
    if piv < PIVOT_FLOOR:
        raise NumericalBreakdownError(
            f"deletion pivot {piv:.3e} at index {i} is below {PIVOT_FLOOR:g}"
        )
    keep = np.r_[0:r, r + 1 : system.size]
    col = H[keep, r]
    Hn = H[np.ix_(keep, keep)] - np.outer(col, col) / piv
    Hn = 0.5 * (Hn + Hn.T)
    Mn = system.matrix[np.ix_(keep, keep)]
    active = tuple(j for j in system.active if j != i)
    return BorderedSystem(
        system.kernel, system.trend, system.points, active, Mn, Hn, system.border_dim
    )
