"""Stationary covariance kernels, observation noise, and trend bases.

Kernels are positive-definite correlation families scaled by a signal
variance; observation noise enters only through the nugget, which is
added on the diagonal of training grams (matched by index, never by
coordinate, so duplicate coordinates still get independent noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError

KERNEL_FAMILIES = ("squared-exponential", "matern-3/2", "matern-5/2")
TREND_FAMILIES = ("simple", "ordinary", "linear")

_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)


def as_point_matrix(points) -> np.ndarray:
    """Coerce input coordinates to a float (n, d) matrix.

    A 1-D sequence is read as n scalar (1-D) sites, matching the
    harness convention for synthetic problems.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"points must be a (n, d) matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("points contain non-finite coordinates")
    return arr


def as_point(x, dim: int | None = None) -> np.ndarray:
    """Coerce a single site to a float (d,) vector, checking d if given."""
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise InputError(f"expected a single point, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise InputError(f"point has dimension {v.shape[0]}, expected {dim}")
    return v


@dataclass(frozen=True)
class KernelSpec:
    """Covariance configuration: family, lengthscale, variance, nugget.

    family : str
        One of ``squared-exponential``, ``matern-3/2``, ``matern-5/2``.
    lengthscale : float
        Correlation lengthscale, > 0.
    variance : float
        Signal (prior) variance, > 0.
    nugget : float
        Observation-noise variance added on training diagonals, >= 0.
    """

    family: str = "squared-exponential"
    lengthscale: float = 1.0
    variance: float = 1.0
    nugget: float = 0.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise InputError(
                f"unknown kernel family {self.family!r}; choose from {KERNEL_FAMILIES}"
            )
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise InputError(f"lengthscale must be positive, got {self.lengthscale}")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise InputError(f"variance must be positive, got {self.variance}")
        if not (np.isfinite(self.nugget) and self.nugget >= 0):
            raise InputError(f"nugget must be non-negative, got {self.nugget}")


def _correlation(family: str, r: np.ndarray) -> np.ndarray:
    # r is distance already scaled by the lengthscale
    if family == "squared-exponential":
        return np.exp(-0.5 * r * r)
    if family == "matern-3/2":
        a = _SQRT3 * r
        return (1.0 + a) * np.exp(-a)
    a = _SQRT5 * r
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Covariance between two sites (no nugget, regardless of coincidence)."""
    xv = as_point(x)
    yv = as_point(y, dim=xv.shape[0])
    r = float(np.linalg.norm(xv - yv)) / spec.lengthscale
    return float(spec.variance * _correlation(spec.family, np.asarray(r)))


def kernel_matrix(spec: KernelSpec, X, Y) -> np.ndarray:
    """Cross-covariance matrix between two site sets, nugget-free."""
    Xm = as_point_matrix(X)
    Ym = as_point_matrix(Y)
    if Xm.shape[1] != Ym.shape[1]:
        raise InputError(
            f"site dimension mismatch: {Xm.shape[1]} vs {Ym.shape[1]}"
        )
    if Xm.shape[0] == 0 or Ym.shape[0] == 0:
        return np.zeros((Xm.shape[0], Ym.shape[0]))
    if spec.family == "squared-exponential":
        sq = cdist(Xm, Ym, metric="sqeuclidean")
        return spec.variance * np.exp(-0.5 * sq / (spec.lengthscale**2))
    r = cdist(Xm, Ym) / spec.lengthscale
    return spec.variance * _correlation(spec.family, r)


def gram(spec: KernelSpec, X) -> np.ndarray:
    """Training gram: kernel matrix plus nugget on the diagonal, by index."""
    Xm = as_point_matrix(X)
    K = kernel_matrix(spec, Xm, Xm)
    if spec.nugget > 0:
        K = K + spec.nugget * np.eye(Xm.shape[0])
    return K


@dataclass(frozen=True)
class TrendBasis:
    """Deterministic trend basis: none, constant, or constant + linear.

    ``p`` is the number of basis functions: 0 (simple Kriging),
    1 (ordinary), or 1 + d (linear).
    """

    family: str = "simple"
    input_dim: int = 1

    def __post_init__(self):
        if self.family not in TREND_FAMILIES:
            raise InputError(
                f"unknown trend family {self.family!r}; choose from {TREND_FAMILIES}"
            )
        if not (isinstance(self.input_dim, int) and self.input_dim >= 1):
            raise InputError(f"input_dim must be a positive integer, got {self.input_dim}")

    @property
    def p(self) -> int:
        if self.family == "simple":
            return 0
        if self.family == "ordinary":
            return 1
        return 1 + self.input_dim


def eval_basis(trend: TrendBasis, x) -> np.ndarray:
    """Basis functions at one site, as a (p,) vector."""
    v = as_point(x)
    if trend.family == "simple":
        return np.zeros(0)
    if trend.family == "ordinary":
        return np.ones(1)
    if v.shape[0] != trend.input_dim:
        raise InputError(
            f"point has dimension {v.shape[0]}, trend expects {trend.input_dim}"
        )
    return np.concatenate([np.ones(1), v])


def basis_matrix(trend: TrendBasis, X) -> np.ndarray:
    """Basis functions on a site set, as an (n, p) matrix."""
    Xm = as_point_matrix(X)
    n = Xm.shape[0]
    if trend.family == "simple":
        return np.zeros((n, 0))
    if trend.family == "ordinary":
        return np.ones((n, 1))
    if Xm.shape[1] != trend.input_dim:
        raise InputError(
            f"sites have dimension {Xm.shape[1]}, trend expects {trend.input_dim}"
        )
    return np.hstack([np.ones((n, 1)), Xm])
